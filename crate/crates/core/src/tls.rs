//! SSL/TLS handshake inspection: negotiated version, SNI and the leaf
//! certificate's expiry and self-signed status.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("stream does not start with a TLS handshake record")]
pub struct NotTls;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TlsVersion {
    Ssl3,
    Tls1_0,
    Tls1_1,
    Tls1_2,
    Unknown,
}

impl TlsVersion {
    pub const ALL: [TlsVersion; 5] =
        [TlsVersion::Ssl3, TlsVersion::Tls1_0, TlsVersion::Tls1_1, TlsVersion::Tls1_2, TlsVersion::Unknown];

    pub fn from_wire(version: u16) -> TlsVersion {
        match version {
            0x0300 => TlsVersion::Ssl3,
            0x0301 => TlsVersion::Tls1_0,
            0x0302 => TlsVersion::Tls1_1,
            0x0303 => TlsVersion::Tls1_2,
            _ => TlsVersion::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TlsVersion::Ssl3 => "ssl3",
            TlsVersion::Tls1_0 => "tls1_0",
            TlsVersion::Tls1_1 => "tls1_1",
            TlsVersion::Tls1_2 => "tls1_2",
            TlsVersion::Unknown => "unknown",
        }
    }
}

/// Certificate checks are `None` when no certificate was observed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsSummary {
    pub version: TlsVersion,
    pub sni: Option<String>,
    pub cert_expired: Option<bool>,
    pub cert_self_signed: Option<bool>,
}

const CONTENT_CHANGE_CIPHER_SPEC: u8 = 0x14;
const CONTENT_HANDSHAKE: u8 = 0x16;

const HS_CLIENT_HELLO: u8 = 1;
const HS_SERVER_HELLO: u8 = 2;
const HS_CERTIFICATE: u8 = 11;

const EXT_SERVER_NAME: u16 = 0;

/// True when `bytes` begins with an SSL3+/TLS handshake record header.
pub fn looks_like_tls(bytes: &[u8]) -> bool {
    bytes.len() >= 3 && bytes[0] == CONTENT_HANDSHAKE && bytes[1] == 0x03 && bytes[2] <= 0x03
}

/// Summarizes a TLS handshake. `observed_at` is in microseconds since the
/// epoch and is the reference instant for the expiry check.
pub fn parse_tls(client: &[u8], server: &[u8], observed_at: u64) -> Result<TlsSummary, NotTls> {
    if client.first() != Some(&CONTENT_HANDSHAKE) {
        return Err(NotTls);
    }
    let mut summary = TlsSummary { version: TlsVersion::Unknown, sni: None, cert_expired: None, cert_self_signed: None };

    let mut client_version = None;
    for (kind, body) in handshake_messages(&handshake_stream(client)) {
        if kind == HS_CLIENT_HELLO {
            if let Some((version, sni)) = parse_client_hello(body) {
                client_version = Some(version);
                summary.sni = sni;
            }
            break;
        }
    }

    let mut server_version = None;
    for (kind, body) in handshake_messages(&handshake_stream(server)) {
        match kind {
            HS_SERVER_HELLO => server_version = body.get(..2).map(|v| u16::from_be_bytes([v[0], v[1]])),
            HS_CERTIFICATE => {
                if let Some(cert) = leaf_certificate(body).and_then(CertificateInfo::parse) {
                    summary.cert_self_signed = Some(cert.issuer == cert.subject);
                    summary.cert_expired = Some(cert.not_after_us < observed_at as i128);
                }
                break;
            }
            _ => {}
        }
    }
    summary.version = server_version.or(client_version).map_or(TlsVersion::Unknown, TlsVersion::from_wire);
    Ok(summary)
}

/// Concatenated plaintext handshake fragments, up to the first
/// ChangeCipherSpec or a record that does not frame.
fn handshake_stream(records: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(header) = records.get(pos..pos + 5) {
        let len = usize::from(u16::from_be_bytes([header[3], header[4]]));
        let Some(fragment) = records.get(pos + 5..pos + 5 + len) else {
            // Keep a truncated trailing fragment: the messages before the cut
            // are still usable.
            if header[0] == CONTENT_HANDSHAKE {
                out.extend_from_slice(&records[pos + 5..]);
            }
            break;
        };
        match header[0] {
            CONTENT_HANDSHAKE => out.extend_from_slice(fragment),
            CONTENT_CHANGE_CIPHER_SPEC => break,
            _ => {}
        }
        pos += 5 + len;
    }
    out
}

/// Complete handshake messages as `(type, body)`.
fn handshake_messages(stream: &[u8]) -> impl Iterator<Item = (u8, &[u8])> {
    let mut pos = 0;
    core::iter::from_fn(move || {
        let header = stream.get(pos..pos + 4)?;
        let len = (usize::from(header[1]) << 16) | (usize::from(header[2]) << 8) | usize::from(header[3]);
        let body = stream.get(pos + 4..pos + 4 + len)?;
        pos += 4 + len;
        Some((header[0], body))
    })
}

fn parse_client_hello(body: &[u8]) -> Option<(u16, Option<String>)> {
    let mut r = Reader::new(body);
    let version = r.u16()?;
    r.skip(32)?;
    let session_id_len = usize::from(r.u8()?);
    r.skip(session_id_len)?;
    let suites_len = usize::from(r.u16()?);
    r.skip(suites_len)?;
    let compression_len = usize::from(r.u8()?);
    r.skip(compression_len)?;
    if r.is_empty() {
        return Some((version, None));
    }
    let ext_len = usize::from(r.u16()?);
    let mut exts = Reader::new(r.take(ext_len)?);
    while !exts.is_empty() {
        let ext_type = exts.u16()?;
        let len = usize::from(exts.u16()?);
        let data = exts.take(len)?;
        if ext_type == EXT_SERVER_NAME {
            return Some((version, parse_server_name(data)));
        }
    }
    Some((version, None))
}

fn parse_server_name(data: &[u8]) -> Option<String> {
    let mut r = Reader::new(data);
    let list_len = usize::from(r.u16()?);
    let mut list = Reader::new(r.take(list_len)?);
    while !list.is_empty() {
        let name_type = list.u8()?;
        let len = usize::from(list.u16()?);
        let name = list.take(len)?;
        if name_type == 0 {
            return core::str::from_utf8(name).ok().map(str::to_ascii_lowercase);
        }
    }
    None
}

fn leaf_certificate(body: &[u8]) -> Option<&[u8]> {
    let mut r = Reader::new(body);
    let _list_len = r.u24()?;
    let cert_len = r.u24()?;
    r.take(cert_len)
}

struct CertificateInfo<'a> {
    issuer: &'a [u8],
    subject: &'a [u8],
    not_after_us: i128,
}

impl<'a> CertificateInfo<'a> {
    fn parse(der: &'a [u8]) -> Option<Self> {
        let (tag, cert, _) = der_element(der)?;
        if tag != 0x30 {
            return None;
        }
        let (tag, tbs, _) = der_element(cert)?;
        if tag != 0x30 {
            return None;
        }
        let mut rest = tbs;
        let mut next = || -> Option<(u8, &'a [u8], &'a [u8])> {
            let (tag, content, raw) = der_element(rest)?;
            rest = &rest[raw.len()..];
            Some((tag, content, raw))
        };
        let (mut tag, _, _) = next()?;
        if tag == 0xa0 {
            // explicit version, then serial
            (tag, _, _) = next()?;
        }
        if tag != 0x02 {
            return None;
        }
        let _signature_algorithm = next()?;
        let (_, _, issuer) = next()?;
        let (tag, validity, _) = next()?;
        if tag != 0x30 {
            return None;
        }
        let (_, _, subject) = next()?;
        let (_, _, not_before) = der_element(validity)?;
        let (time_tag, time, _) = der_element(&validity[not_before.len()..])?;
        let not_after_us = der_time_to_unix(time_tag, time)? * 1_000_000;
        Some(CertificateInfo { issuer, subject, not_after_us })
    }
}

/// Splits one DER TLV: `(tag, content, whole element bytes)`.
fn der_element(buf: &[u8]) -> Option<(u8, &[u8], &[u8])> {
    let tag = *buf.first()?;
    let first = *buf.get(1)?;
    let (len, header) = if first & 0x80 == 0 {
        (usize::from(first), 2)
    } else {
        let n = usize::from(first & 0x7f);
        if n == 0 || n > 4 {
            return None;
        }
        let mut len = 0usize;
        for &b in buf.get(2..2 + n)? {
            len = (len << 8) | usize::from(b);
        }
        (len, 2 + n)
    };
    let content = buf.get(header..header + len)?;
    Some((tag, content, &buf[..header + len]))
}

/// UTCTime (0x17) or GeneralizedTime (0x18), `Z` suffix, to Unix seconds.
fn der_time_to_unix(tag: u8, text: &[u8]) -> Option<i128> {
    let s = core::str::from_utf8(text).ok()?;
    let s = s.strip_suffix('Z')?;
    let (year, rest) = match tag {
        0x17 => {
            let yy: i64 = s.get(..2)?.parse().ok()?;
            (if yy < 50 { 2000 + yy } else { 1900 + yy }, s.get(2..)?)
        }
        0x18 => (s.get(..4)?.parse().ok()?, s.get(4..)?),
        _ => return None,
    };
    let rest = rest.split('.').next()?;
    if rest.len() != 10 || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let field = |i: usize| -> i64 { rest[i..i + 2].parse().unwrap_or(0) };
    let (month, day, hour, minute, second) = (field(0), field(2), field(4), field(6), field(8));
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return None;
    }
    let days = days_from_civil(year, month, day);
    Some(i128::from(days * 86_400 + hour * 3600 + minute * 60 + second))
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(year: i64, month: i64, day: i64) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if n > self.buf.len() {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    fn skip(&mut self, n: usize) -> Option<()> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }

    fn u24(&mut self) -> Option<usize> {
        self.take(3).map(|b| (usize::from(b[0]) << 16) | (usize::from(b[1]) << 8) | usize::from(b[2]))
    }
}
