//! HTTP/1.x transaction parsing over reassembled byte streams.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("stream does not start with an HTTP request line")]
pub struct NotHttp;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpTransaction {
    pub method: String,
    pub host: Option<String>,
    pub user_agent: Option<String>,
    pub request_cookie_count: u32,
    pub response_status: Option<u16>,
    pub response_content_type: Option<String>,
    pub response_content_encoding: Option<String>,
    pub response_content_disposition: Option<String>,
    pub response_body: Option<Vec<u8>>,
}

const METHODS: [&str; 9] = ["GET", "POST", "HEAD", "PUT", "DELETE", "OPTIONS", "PATCH", "CONNECT", "TRACE"];

/// True when `bytes` begins with a known request method followed by a space.
pub fn looks_like_http_request(bytes: &[u8]) -> bool {
    METHODS.iter().any(|m| bytes.len() > m.len() && bytes.starts_with(m.as_bytes()) && bytes[m.len()] == b' ')
}

/// Parses pipelined requests from `client` and pairs them in order with the
/// responses in `server`. Parsing stops at the first framing error, keeping
/// what was complete before it.
pub fn parse_http(client: &[u8], server: &[u8]) -> Result<Vec<HttpTransaction>, NotHttp> {
    if client.is_empty() {
        return Ok(Vec::new());
    }
    if !looks_like_http_request(client) {
        return Err(NotHttp);
    }

    let mut transactions = Vec::new();
    let mut rest = client;
    while !rest.is_empty() && looks_like_http_request(rest) {
        let Some(head) = Message::parse_head(rest) else { break };
        let method = head.start_line.split(' ').next().unwrap_or_default().to_string();
        let Some((_, consumed)) = read_body(&head, rest, BodyMode::Request) else { break };
        rest = &rest[consumed..];
        let cookie_count = head.values("cookie").map(count_cookies).sum();
        transactions.push(HttpTransaction {
            method,
            host: head.value("host").map(strip_port),
            user_agent: head.value("user-agent").map(ToString::to_string),
            request_cookie_count: cookie_count,
            ..HttpTransaction::default()
        });
    }

    let mut rest = server;
    let mut idx = 0;
    while idx < transactions.len() && rest.starts_with(b"HTTP/") {
        let Some(head) = Message::parse_head(rest) else { break };
        let Some(status) = head.start_line.split(' ').nth(1).and_then(|s| s.parse::<u16>().ok()) else {
            break;
        };
        let mode = if transactions[idx].method == "HEAD" { BodyMode::NoBody } else { BodyMode::Response(status) };
        let Some((body, consumed)) = read_body(&head, rest, mode) else { break };
        rest = &rest[consumed..];
        if (100..200).contains(&status) {
            continue;
        }
        let tx = &mut transactions[idx];
        tx.response_status = Some(status);
        tx.response_content_type = head.value("content-type").map(ToString::to_string);
        tx.response_content_encoding = head.value("content-encoding").map(str::to_ascii_lowercase);
        tx.response_content_disposition = head.value("content-disposition").map(ToString::to_string);
        tx.response_body = Some(body);
        idx += 1;
    }
    Ok(transactions)
}

/// Number of `name=value` pairs in a Cookie header value.
pub fn count_cookies(value: &str) -> u32 {
    value
        .split(';')
        .filter(|pair| pair.split_once('=').is_some_and(|(name, _)| !name.trim().is_empty()))
        .count() as u32
}

/// Extracts the `Android <version>` token from a User-Agent string.
pub fn parse_user_agent_os(user_agent: &str) -> Option<String> {
    const TOKEN: &str = "Android ";
    let mut search = user_agent;
    while let Some(pos) = search.find(TOKEN) {
        let tail = &search[pos + TOKEN.len()..];
        let version = version_prefix(tail);
        if !version.is_empty() {
            let mut out = String::from(TOKEN);
            out.push_str(version);
            return Some(out);
        }
        search = &search[pos + TOKEN.len()..];
    }
    None
}

/// Longest prefix matching `digits(.digits){0,2}`.
fn version_prefix(s: &str) -> &str {
    let bytes = s.as_bytes();
    let mut end = 0;
    let mut groups = 0;
    let mut i = 0;
    while groups < 3 {
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            break;
        }
        end = i;
        groups += 1;
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
        } else {
            break;
        }
    }
    &s[..end]
}

fn strip_port(host: &str) -> String {
    let host = host.trim();
    let stripped = match host.rsplit_once(':') {
        Some((h, port)) if !h.contains(':') && port.bytes().all(|b| b.is_ascii_digit()) => h,
        _ => host,
    };
    stripped.to_ascii_lowercase()
}

struct Message {
    start_line: String,
    headers: Vec<(String, String)>,
    head_len: usize,
}

impl Message {
    fn parse_head(buf: &[u8]) -> Option<Message> {
        let head_len = find_head_end(buf)?;
        let text = String::from_utf8_lossy(&buf[..head_len]);
        let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
        let start_line = lines.next()?.to_string();
        let mut headers = Vec::new();
        for line in lines {
            if line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                headers.push((name.trim().to_ascii_lowercase(), value.trim().to_string()));
            } else if !line.starts_with([' ', '\t']) {
                return None;
            }
        }
        Some(Message { start_line, headers, head_len })
    }

    fn value<'a>(&'a self, name: &'a str) -> Option<&'a str> {
        self.values(name).next()
    }

    fn values<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.headers.iter().filter(move |(n, _)| n == name).map(|(_, v)| v.as_str())
    }
}

/// Offset just past the blank line that ends the header block.
fn find_head_end(buf: &[u8]) -> Option<usize> {
    let mut i = 0;
    while i < buf.len() {
        if buf[i] == b'\n' {
            if buf.get(i + 1) == Some(&b'\n') {
                return Some(i + 2);
            }
            if buf.get(i + 1) == Some(&b'\r') && buf.get(i + 2) == Some(&b'\n') {
                return Some(i + 3);
            }
        }
        i += 1;
    }
    None
}

#[derive(Clone, Copy)]
enum BodyMode {
    Request,
    Response(u16),
    NoBody,
}

/// Returns the decoded body and the total bytes consumed by the message.
fn read_body(head: &Message, buf: &[u8], mode: BodyMode) -> Option<(Vec<u8>, usize)> {
    let start = head.head_len;
    let no_body = match mode {
        BodyMode::NoBody => true,
        BodyMode::Response(status) => (100..200).contains(&status) || status == 204 || status == 304,
        BodyMode::Request => false,
    };
    if no_body {
        return Some((Vec::new(), start));
    }
    let chunked = head
        .value("transfer-encoding")
        .is_some_and(|te| te.to_ascii_lowercase().split(',').any(|t| t.trim() == "chunked"));
    if chunked {
        let (body, used) = dechunk(&buf[start..])?;
        return Some((body, start + used));
    }
    if let Some(len) = head.value("content-length") {
        let len: usize = len.parse().ok()?;
        let body = buf.get(start..start + len)?;
        return Some((body.to_vec(), start + len));
    }
    match mode {
        BodyMode::Request => Some((Vec::new(), start)),
        // Delimited by connection close.
        _ => Some((buf[start..].to_vec(), buf.len())),
    }
}

fn dechunk(buf: &[u8]) -> Option<(Vec<u8>, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        let line_end = pos + buf[pos..].iter().position(|&b| b == b'\n')?;
        let line = core::str::from_utf8(&buf[pos..line_end]).ok()?.trim_end_matches('\r');
        let size_text = line.split(';').next()?.trim();
        let size = usize::from_str_radix(size_text, 16).ok()?;
        pos = line_end + 1;
        if size == 0 {
            // Trailer section ends with an empty line.
            loop {
                let end = pos + buf[pos..].iter().position(|&b| b == b'\n')?;
                let empty = buf[pos..end].iter().all(|&b| b == b'\r');
                pos = end + 1;
                if empty {
                    return Some((out, pos));
                }
            }
        }
        out.extend_from_slice(buf.get(pos..pos + size)?);
        pos += size;
        match buf.get(pos..pos + 2) {
            Some(b"\r\n") => pos += 2,
            _ if buf.get(pos) == Some(&b'\n') => pos += 1,
            _ => return None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cookies_and_content_type() {
        let req = b"GET /index.html HTTP/1.1\r\nHost: news.example.org\r\nCookie: a=1; b=2\r\n\r\n";
        let resp = b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: 5\r\n\r\nhello";
        let txs = parse_http(req, resp).unwrap();
        assert_eq!(txs.len(), 1);
        assert_eq!(txs[0].request_cookie_count, 2);
        assert_eq!(txs[0].response_content_type.as_deref(), Some("text/html"));
        assert_eq!(txs[0].host.as_deref(), Some("news.example.org"));
        assert_eq!(txs[0].response_body.as_deref(), Some(&b"hello"[..]));
    }

    #[test]
    fn empty_streams() {
        assert_eq!(parse_http(b"", b""), Ok(Vec::new()));
    }

    #[test]
    fn not_http() {
        assert_eq!(parse_http(&[0x16, 0x03, 0x01], b""), Err(NotHttp));
        assert_eq!(parse_http(b"GETX / HTTP/1.1\r\n\r\n", b""), Err(NotHttp));
    }

    #[test]
    fn pipelined_pairs_in_order() {
        let req = b"GET /a HTTP/1.1\r\nHost: h\r\n\r\nGET /b HTTP/1.1\r\nHost: h\r\nCookie: x=1\r\n\r\n";
        let resp = b"HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: 1\r\n\r\nA\
HTTP/1.1 404 Not Found\r\nContent-Type: application/json\r\nContent-Length: 2\r\n\r\n{}";
        let txs = parse_http(req, resp).unwrap();
        assert_eq!(txs.len(), 2);
        assert_eq!(txs[0].response_status, Some(200));
        assert_eq!(txs[0].request_cookie_count, 0);
        assert_eq!(txs[1].response_status, Some(404));
        assert_eq!(txs[1].request_cookie_count, 1);
        assert_eq!(txs[1].response_body.as_deref(), Some(&b"{}"[..]));
    }

    #[test]
    fn chunked_is_dechunked() {
        let req = b"GET / HTTP/1.1\r\nHost: h\r\n\r\n";
        let resp = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n4\r\nWiki\r\n5;ext=1\r\npedia\r\n0\r\n\r\n";
        let txs = parse_http(req, resp).unwrap();
        assert_eq!(txs[0].response_body.as_deref(), Some(&b"Wikipedia"[..]));
    }

    #[test]
    fn truncated_response_keeps_request() {
        let req = b"GET / HTTP/1.1\r\nHost: h:8080\r\n\r\n";
        let resp = b"HTTP/1.1 200 OK\r\nContent-Length: 50\r\n\r\nshort";
        let txs = parse_http(req, resp).unwrap();
        assert_eq!(txs.len(), 1);
        assert_eq!(txs[0].response_status, None);
        assert_eq!(txs[0].host.as_deref(), Some("h"));
    }

    #[test]
    fn interim_and_head_responses() {
        let req = b"HEAD / HTTP/1.1\r\nHost: h\r\n\r\nPOST /f HTTP/1.1\r\nContent-Length: 3\r\n\r\na=b";
        let resp = b"HTTP/1.1 200 OK\r\nContent-Length: 99\r\n\r\nHTTP/1.1 100 Continue\r\n\r\nHTTP/1.1 201 Created\r\nContent-Length: 0\r\n\r\n";
        let txs = parse_http(req, resp).unwrap();
        assert_eq!(txs.len(), 2);
        assert_eq!(txs[1].method, "POST");
        assert_eq!(txs[1].response_status, Some(201));
    }

    #[test]
    fn cookie_counting_rules() {
        assert_eq!(count_cookies("a=1; b=2"), 2);
        assert_eq!(count_cookies("a=1;;  ; =x; flag"), 1);
        assert_eq!(count_cookies(""), 0);
    }

    #[test]
    fn user_agent_versions() {
        assert_eq!(
            parse_user_agent_os("Dalvik/2.1.0 (Linux; U; Android 5.0.1; Nexus 5 Build/LRX22C)").as_deref(),
            Some("Android 5.0.1")
        );
        assert_eq!(parse_user_agent_os("curl/7.1"), None);
        assert_eq!(
            parse_user_agent_os("Mozilla/5.0 (Linux; Android 4.4.2; SM-G900F)").as_deref(),
            Some("Android 4.4.2")
        );
        assert_eq!(parse_user_agent_os("Android 6.0.1.9").as_deref(), Some("Android 6.0.1"));
        assert_eq!(parse_user_agent_os("Android x; Android 7").as_deref(), Some("Android 7"));
    }
}
