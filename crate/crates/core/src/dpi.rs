//! Payload inspection of plaintext HTTP responses: forms and credential
//! fields, e-mail addresses, file downloads, JSON and XML documents.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::http::HttpTransaction;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpiScan {
    pub form_count: u32,
    pub has_email_field: bool,
    pub has_username_field: bool,
    pub has_password_field: bool,
    pub downloaded_file_count: u32,
    /// Multiset of download type tags.
    pub downloaded_file_types: BTreeMap<String, u32>,
    pub json_documents: u32,
    pub xml_documents: u32,
    /// Bodies that could not be decompressed or failed to parse as their
    /// declared document type.
    pub undecodable_bodies: u32,
}

/// Scans every response body in `transactions`.
pub fn dpi_scan(transactions: &[HttpTransaction]) -> DpiScan {
    let mut scan = DpiScan::default();
    for tx in transactions {
        let Some(raw) = tx.response_body.as_deref() else { continue };
        let Some(body) = decode_body(raw, tx.response_content_encoding.as_deref()) else {
            scan.undecodable_bodies += 1;
            continue;
        };
        let media = tx.response_content_type.as_deref().map(media_type).unwrap_or_default();
        let attachment = tx.response_content_disposition.as_deref().is_some_and(is_attachment);

        if attachment || is_download_type(&media) {
            scan.downloaded_file_count += 1;
            let tag = download_tag(&media, tx.response_content_disposition.as_deref());
            *scan.downloaded_file_types.entry(tag).or_insert(0) += 1;
            continue;
        }

        if is_html(&media, &body) {
            scan_html(&body, &mut scan);
        }
        if is_json(&media) {
            if serde_json::from_slice::<serde_json::Value>(&body).is_ok() {
                scan.json_documents += 1;
            } else {
                scan.undecodable_bodies += 1;
            }
        } else if is_xml(&media) {
            if xml_well_formed(&body) {
                scan.xml_documents += 1;
            } else {
                scan.undecodable_bodies += 1;
            }
        }
        if is_textual(&media) && contains_email(&body) {
            scan.has_email_field = true;
        }
    }
    scan
}

fn decode_body<'a>(raw: &'a [u8], encoding: Option<&str>) -> Option<Cow<'a, [u8]>> {
    let Some(encoding) = encoding else { return Some(Cow::Borrowed(raw)) };
    let mut decoded = Cow::Borrowed(raw);
    // Encodings are listed in the order they were applied.
    for coding in encoding.rsplit(',').map(|c| c.trim().to_ascii_lowercase()) {
        decoded = match coding.as_str() {
            "" | "identity" => decoded,
            "gzip" | "x-gzip" => Cow::Owned(gunzip(&decoded)?),
            "deflate" => Cow::Owned(
                miniz_oxide::inflate::decompress_to_vec_zlib(&decoded)
                    .or_else(|_| miniz_oxide::inflate::decompress_to_vec(&decoded))
                    .ok()?,
            ),
            _ => return None,
        };
    }
    Some(decoded)
}

/// Inflates a gzip member (RFC 1952).
pub fn gunzip(data: &[u8]) -> Option<Vec<u8>> {
    const FHCRC: u8 = 0x02;
    const FEXTRA: u8 = 0x04;
    const FNAME: u8 = 0x08;
    const FCOMMENT: u8 = 0x10;

    if data.len() < 18 || data[0] != 0x1f || data[1] != 0x8b || data[2] != 8 {
        return None;
    }
    let flags = data[3];
    let mut pos = 10;
    if flags & FEXTRA != 0 {
        let xlen = usize::from(u16::from_le_bytes([*data.get(pos)?, *data.get(pos + 1)?]));
        pos += 2 + xlen;
    }
    for flag in [FNAME, FCOMMENT] {
        if flags & flag != 0 {
            pos += data.get(pos..)?.iter().position(|&b| b == 0)? + 1;
        }
    }
    if flags & FHCRC != 0 {
        pos += 2;
    }
    let deflated = data.get(pos..data.len().checked_sub(8)?)?;
    let out = miniz_oxide::inflate::decompress_to_vec(deflated).ok()?;
    let trailer = &data[data.len() - 8..];
    let isize = u32::from_le_bytes([trailer[4], trailer[5], trailer[6], trailer[7]]);
    (isize == out.len() as u32).then_some(out)
}

fn media_type(content_type: &str) -> String {
    content_type.split(';').next().unwrap_or_default().trim().to_ascii_lowercase()
}

fn is_attachment(disposition: &str) -> bool {
    disposition.split(';').next().is_some_and(|d| d.trim().eq_ignore_ascii_case("attachment"))
}

fn is_download_type(media: &str) -> bool {
    matches!(
        media,
        "application/pdf" | "application/zip" | "application/octet-stream" | "application/vnd.android.package-archive"
    ) || media.starts_with("audio/")
        || media.starts_with("video/")
}

/// MIME subtype when a content type is present, else the filename extension.
/// MIME subtype, unless generic, else the filename extension.
fn download_tag(media: &str, disposition: Option<&str>) -> String {
    if let Some((_, subtype)) = media.split_once('/') {
        if !subtype.is_empty() && subtype != "octet-stream" {
            return subtype.to_string();
        }
    }
    disposition
        .and_then(disposition_filename)
        .and_then(|name| name.rsplit_once('.').map(|(_, ext)| ext.to_ascii_lowercase()))
        .filter(|ext| !ext.is_empty())
        .or_else(|| media.split_once('/').map(|(_, sub)| sub.to_string()).filter(|sub| !sub.is_empty()))
        .unwrap_or_else(|| "unknown".to_string())
}

fn disposition_filename(disposition: &str) -> Option<&str> {
    disposition.split(';').skip(1).find_map(|param| {
        let (key, value) = param.split_once('=')?;
        key.trim().eq_ignore_ascii_case("filename").then(|| value.trim().trim_matches('"'))
    })
}

fn is_html(media: &str, body: &[u8]) -> bool {
    if media == "text/html" || media == "application/xhtml+xml" {
        return true;
    }
    if !media.is_empty() {
        return false;
    }
    let head: Vec<u8> = body.iter().skip_while(|b| b.is_ascii_whitespace()).take(15).map(u8::to_ascii_lowercase).collect();
    head.starts_with(b"<!doctype html") || head.starts_with(b"<html")
}

fn is_json(media: &str) -> bool {
    media == "application/json" || media.ends_with("+json")
}

fn is_xml(media: &str) -> bool {
    media == "application/xml" || media == "text/xml" || (media.ends_with("+xml") && media != "application/xhtml+xml")
}

fn is_textual(media: &str) -> bool {
    media.is_empty()
        || media.starts_with("text/")
        || is_json(media)
        || is_xml(media)
        || media == "application/xhtml+xml"
        || media == "application/x-www-form-urlencoded"
}

fn scan_html(body: &[u8], scan: &mut DpiScan) {
    let lower: Vec<u8> = body.iter().map(u8::to_ascii_lowercase).collect();
    let mut in_form = false;
    let mut pos = 0;
    while let Some(offset) = lower[pos..].iter().position(|&b| b == b'<') {
        let start = pos + offset + 1;
        let Some(len) = tag_end(&lower[start..]) else { break };
        let tag = &lower[start..start + len];
        pos = start + len + 1;

        let closing = tag.first() == Some(&b'/');
        let name_end = tag
            .iter()
            .enumerate()
            .position(|(i, b)| b.is_ascii_whitespace() || (*b == b'/' && !(closing && i == 0)))
            .unwrap_or(tag.len());
        match &tag[..name_end] {
            b"form" => {
                scan.form_count += 1;
                in_form = true;
            }
            b"/form" => in_form = false,
            b"input" | b"textarea" if in_form => {
                let attrs = parse_attributes(&tag[name_end..]);
                let attr = |key: &str| attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
                let kind = attr("type").unwrap_or("text");
                let name = attr("name").unwrap_or("");
                if kind == "password" {
                    scan.has_password_field = true;
                }
                if kind == "email" || name.contains("email") {
                    scan.has_email_field = true;
                }
                if name.contains("user") || name.contains("login") {
                    scan.has_username_field = true;
                }
            }
            _ => {}
        }
    }
}

/// Length of a tag body up to its closing `>`, honoring quoted attribute
/// values.
fn tag_end(rest: &[u8]) -> Option<usize> {
    let mut quote = None;
    for (i, &b) in rest.iter().enumerate() {
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => quote = Some(b),
            None if b == b'>' => return Some(i),
            None => {}
        }
    }
    None
}

fn parse_attributes(mut s: &[u8]) -> Vec<(String, String)> {
    let mut attrs = Vec::new();
    loop {
        while let [first, rest @ ..] = s {
            if first.is_ascii_whitespace() || *first == b'/' {
                s = rest;
            } else {
                break;
            }
        }
        if s.is_empty() {
            return attrs;
        }
        let key_len = s.iter().position(|b| b.is_ascii_whitespace() || *b == b'=' || *b == b'/').unwrap_or(s.len());
        let key = String::from_utf8_lossy(&s[..key_len]).into_owned();
        s = &s[key_len..];
        while let [b' ' | b'\t' | b'\n' | b'\r', rest @ ..] = s {
            s = rest;
        }
        let mut value = String::new();
        if let [b'=', rest @ ..] = s {
            s = rest;
            while let [b' ' | b'\t' | b'\n' | b'\r', rest @ ..] = s {
                s = rest;
            }
            let (raw, after) = match s {
                [q @ (b'"' | b'\''), rest @ ..] => {
                    let end = rest.iter().position(|b| b == q).unwrap_or(rest.len());
                    (&rest[..end], rest.get(end + 1..).unwrap_or(&[]))
                }
                _ => {
                    let end = s.iter().position(u8::is_ascii_whitespace).unwrap_or(s.len());
                    (&s[..end], &s[end..])
                }
            };
            value = String::from_utf8_lossy(raw).into_owned();
            s = after;
        }
        if key.is_empty() {
            s = s.get(1..).unwrap_or(&[]);
        } else {
            attrs.push((key, value));
        }
    }
}

/// Whether `text` contains a match of
/// `[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}`.
pub fn contains_email(text: &[u8]) -> bool {
    let local = |b: u8| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'%' | b'+' | b'-');
    let domain = |b: u8| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-');
    text.iter().enumerate().any(|(at, &b)| {
        if b != b'@' || at == 0 || !local(text[at - 1]) {
            return false;
        }
        let run = &text[at + 1..];
        let run = &run[..run.iter().position(|&c| !domain(c)).unwrap_or(run.len())];
        // Some dot past the first character followed by two letters.
        (1..run.len()).any(|dot| {
            run[dot] == b'.'
                && run.get(dot + 1).is_some_and(u8::is_ascii_alphabetic)
                && run.get(dot + 2).is_some_and(u8::is_ascii_alphabetic)
        })
    })
}

/// Structural XML well-formedness: one root element, balanced and properly
/// nested tags, quoted attributes. Entities and DTDs are not expanded.
pub fn xml_well_formed(doc: &[u8]) -> bool {
    let Ok(text) = core::str::from_utf8(doc) else { return false };
    let text = text.trim_start_matches('\u{feff}');
    let mut stack: Vec<&str> = Vec::new();
    let mut roots = 0;
    let mut rest = text;
    loop {
        let Some(lt) = rest.find('<') else {
            return stack.is_empty() && roots == 1 && rest.trim().is_empty();
        };
        let text_run = &rest[..lt];
        if stack.is_empty() && !text_run.trim().is_empty() {
            return false;
        }
        rest = &rest[lt..];
        let skip = |rest: &mut &str, open: &str, close: &str| -> Option<bool> {
            if rest.starts_with(open) {
                let end = rest[open.len()..].find(close)?;
                *rest = &rest[open.len() + end + close.len()..];
                Some(true)
            } else {
                Some(false)
            }
        };
        let mut matched = false;
        for (open, close) in [("<?", "?>"), ("<!--", "-->"), ("<![CDATA[", "]]>")] {
            match skip(&mut rest, open, close) {
                Some(true) => {
                    matched = true;
                    break;
                }
                Some(false) => {}
                None => return false,
            }
        }
        if matched {
            continue;
        }
        if rest.starts_with("<!") {
            if !stack.is_empty() || roots > 0 {
                return false;
            }
            let Some(end) = doctype_end(rest) else { return false };
            rest = &rest[end..];
            continue;
        }
        let Some(len) = tag_end(&rest.as_bytes()[1..]) else { return false };
        let tag = &rest[1..1 + len];
        rest = &rest[len + 2..];
        if let Some(name) = tag.strip_prefix('/') {
            if stack.pop() != Some(name.trim_end()) {
                return false;
            }
            continue;
        }
        let self_closing = tag.ends_with('/');
        let body = tag.trim_end_matches('/');
        let name_len = body.find(|c: char| c.is_whitespace()).unwrap_or(body.len());
        let name = &body[..name_len];
        if name.is_empty() || !name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_' || c == ':') {
            return false;
        }
        if !attributes_well_formed(&body[name_len..]) {
            return false;
        }
        if stack.is_empty() {
            roots += 1;
            if roots > 1 {
                return false;
            }
        }
        if !self_closing {
            stack.push(name);
        }
    }
}

fn doctype_end(rest: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in rest.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            '>' if depth == 0 => return Some(i + 1),
            _ => {}
        }
    }
    None
}

fn attributes_well_formed(mut s: &str) -> bool {
    loop {
        s = s.trim_start();
        if s.is_empty() {
            return true;
        }
        let Some(eq) = s.find('=') else { return false };
        let key = s[..eq].trim_end();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return false;
        }
        s = s[eq + 1..].trim_start();
        let Some(q) = s.chars().next().filter(|c| *c == '"' || *c == '\'') else { return false };
        let Some(end) = s[1..].find(q) else { return false };
        if s[1..1 + end].contains('<') {
            return false;
        }
        s = &s[end + 2..];
    }
}
