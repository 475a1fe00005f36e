//! Attribution of packets to subjects.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use core::net::IpAddr;

use crate::packet::Packet;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubjectMapError {
    #[error("line {line}: expected `client<TAB>subject_id`")]
    Malformed { line: usize },
    #[error("line {line}: client `{client}` declared twice")]
    Duplicate { line: usize, client: String },
}

/// Client identifier to subject mapping.
///
/// Keys are either client IP addresses or capture identities (the file stem
/// of a per-subject capture). The text form is one `client<TAB>subject_id`
/// pair per line with `#` comments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubjectMap {
    by_ip: BTreeMap<IpAddr, String>,
    by_capture: BTreeMap<String, String>,
}

impl SubjectMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, SubjectMapError> {
        let mut map = SubjectMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t').map(str::trim).filter(|s| !s.is_empty());
            let (Some(client), Some(subject), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(SubjectMapError::Malformed { line: line_no });
            };
            if !map.insert(client, subject) {
                return Err(SubjectMapError::Duplicate { line: line_no, client: client.to_string() });
            }
        }
        Ok(map)
    }

    /// Adds a mapping; returns false if the client was already declared.
    pub fn insert(&mut self, client: &str, subject_id: &str) -> bool {
        match client.parse::<IpAddr>() {
            Ok(ip) => self.by_ip.insert(ip, subject_id.to_string()).is_none(),
            Err(_) => self.by_capture.insert(client.to_string(), subject_id.to_string()).is_none(),
        }
    }

    pub fn subject_for_ip(&self, ip: &IpAddr) -> Option<&str> {
        self.by_ip.get(ip).map(String::as_str)
    }

    pub fn subject_for_capture(&self, capture: &str) -> Option<&str> {
        self.by_capture.get(capture).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_ip.len() + self.by_capture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(client, subject)` pairs, IP entries first.
    pub fn entries(&self) -> impl Iterator<Item = (String, &str)> {
        self.by_ip
            .iter()
            .map(|(ip, s)| (ip.to_string(), s.as_str()))
            .chain(self.by_capture.iter().map(|(c, s)| (c.clone(), s.as_str())))
    }
}

/// Subject owning the client side of `packet`, checking the source address
/// first so server-to-client packets resolve to the same subject.
pub fn assign_subject<'m>(packet: &Packet, map: &'m SubjectMap) -> Option<&'m str> {
    map.subject_for_ip(&packet.src_ip).or_else(|| map.subject_for_ip(&packet.dst_ip))
}
