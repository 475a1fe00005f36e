use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use regex::bytes::Regex;
use serde::Deserialize;
use trafprof_core::dpi::{contains_email, dpi_scan};
use trafprof_core::features::statistical_features;
use trafprof_core::http::{parse_http, parse_user_agent_os, HttpTransaction};
use trafprof_core::session::FiveTuple;
use trafprof_core::tls::{parse_tls, TlsVersion};
use trafprof_core::{CloseReason, Packet, Session, TcpFlags, Transport};

#[derive(Deserialize)]
struct TlsCase {
    name: String,
    sni: String,
    version: String,
    cert_expired: bool,
    cert_self_signed: bool,
    observed_at_us: u64,
}

fn tls_fixtures() -> Vec<(TlsCase, Vec<u8>, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tls");
    let cases: Vec<TlsCase> = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    cases
        .into_iter()
        .map(|c| {
            let client = std::fs::read(dir.join(format!("{}.client.bin", c.name))).unwrap();
            let server = std::fs::read(dir.join(format!("{}.server.bin", c.name))).unwrap();
            (c, client, server)
        })
        .collect()
}

#[test]
fn real_handshakes_parse() {
    let fixtures = tls_fixtures();
    assert_eq!(fixtures.len(), 3);
    for (case, client, server) in fixtures {
        let tls = parse_tls(&client, &server, case.observed_at_us).unwrap();
        assert_eq!(tls.sni.as_deref(), Some(case.sni.as_str()), "{}", case.name);
        assert_eq!(tls.version.as_str(), case.version, "{}", case.name);
        assert_eq!(tls.cert_expired, Some(case.cert_expired), "{}", case.name);
        assert_eq!(tls.cert_self_signed, Some(case.cert_self_signed), "{}", case.name);

        // client flight only: version from the ClientHello, no certificate
        let tls = parse_tls(&client, &[], case.observed_at_us).unwrap();
        assert_eq!(tls.sni.as_deref(), Some(case.sni.as_str()));
        assert_eq!((tls.cert_expired, tls.cert_self_signed), (None, None));

        // server flight cut inside the Certificate message
        let tls = parse_tls(&client, &server[..server.len() / 2], case.observed_at_us).unwrap();
        assert_eq!(tls.version, TlsVersion::Tls1_2);
        assert_eq!((tls.cert_expired, tls.cert_self_signed), (None, None));
    }
}

#[test]
fn http_examples() {
    let req = b"GET / HTTP/1.1\r\nHost: www.example.com:8080\r\nCookie: a=1; b=2\r\nUser-Agent: Dalvik/2.1.0 (Linux; U; Android 5.0.1; Nexus 5 Build/LRX22C)\r\n\r\n";
    let resp = b"HTTP/1.1 200 OK\r\nContent-Type: text/html; charset=utf-8\r\nContent-Length: 5\r\n\r\nhello";
    let txs = parse_http(req, resp).unwrap();
    assert_eq!(txs.len(), 1);
    assert_eq!(txs[0].request_cookie_count, 2);
    assert_eq!(txs[0].host.as_deref(), Some("www.example.com"));
    assert_eq!(txs[0].response_content_type.as_deref(), Some("text/html; charset=utf-8"));
    assert_eq!(txs[0].response_body.as_deref(), Some(&b"hello"[..]));

    assert!(parse_http(b"", b"").unwrap().is_empty());

    let two = [&req[..], &req[..]].concat();
    let resp2 = b"HTTP/1.1 200 OK\r\nContent-Length: 1\r\n\r\nAHTTP/1.1 404 Not Found\r\nTransfer-Encoding: chunked\r\n\r\n2\r\nBC\r\n0\r\n\r\n";
    let txs = parse_http(&two, resp2).unwrap();
    assert_eq!(txs.len(), 2);
    assert_eq!(txs[0].response_status, Some(200));
    assert_eq!(txs[1].response_status, Some(404));
    assert_eq!(txs[1].response_body.as_deref(), Some(&b"BC"[..]));
}

#[test]
fn user_agent_examples() {
    assert_eq!(
        parse_user_agent_os("Dalvik/2.1.0 (Linux; U; Android 5.0.1; Nexus 5 Build/LRX22C)").as_deref(),
        Some("Android 5.0.1")
    );
    assert_eq!(parse_user_agent_os("curl/7.1"), None);
    assert_eq!(parse_user_agent_os("Mozilla/5.0 (Linux; Android 4.4.2; SM-G900F)").as_deref(), Some("Android 4.4.2"));
}

fn response(content_type: &str, disposition: Option<&str>, body: &[u8], encoding: Option<&str>) -> HttpTransaction {
    HttpTransaction {
        method: "GET".into(),
        host: Some("example.com".into()),
        user_agent: None,
        request_cookie_count: 0,
        response_status: Some(200),
        response_content_type: Some(content_type.into()),
        response_content_encoding: encoding.map(Into::into),
        response_content_disposition: disposition.map(Into::into),
        response_body: Some(body.to_vec()),
    }
}

fn gzip(body: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(body).unwrap();
    enc.finish().unwrap()
}

const HTML_FIXTURES: [&str; 5] = [
    "<html><body><form action=/l><input type=\"password\" name=pw></form></body></html>",
    "<form><input name=\"username\"></form><form method=post><input type=email></form>",
    "<p>write to help.desk@example.org</p>",
    "<FORM><textarea name=login_hint></textarea></FORM>",
    "<html>nothing here</html>",
];

#[test]
fn dpi_examples() {
    let scan = dpi_scan(&[response("text/html", None, HTML_FIXTURES[0].as_bytes(), None)]);
    assert_eq!((scan.form_count, scan.has_password_field), (1, true));

    let scan = dpi_scan(&[response("text/html", None, &gzip(HTML_FIXTURES[1].as_bytes()), Some("gzip"))]);
    assert_eq!(scan.form_count, 2);
    assert!(scan.has_username_field && scan.has_email_field);

    let scan = dpi_scan(&[response("application/octet-stream", Some("attachment; filename=a.pdf"), b"%PDF", None)]);
    assert_eq!(scan.downloaded_file_count, 1);
    assert_eq!(scan.downloaded_file_types.get("pdf"), Some(&1));
}

#[test]
fn gzip_is_transparent_on_fixtures() {
    let mut bodies: Vec<(&str, Vec<u8>)> = HTML_FIXTURES.iter().map(|h| ("text/html", h.as_bytes().to_vec())).collect();
    bodies.push(("application/json", br#"{"user":"a@b.io","n":[1,2]}"#.to_vec()));
    bodies.push(("application/xml", b"<a><b x='1'/></a>".to_vec()));
    bodies.push(("application/json", b"{broken".to_vec()));
    bodies.push(("application/pdf", b"%PDF-1.4".to_vec()));
    for (ct, body) in bodies {
        let plain = dpi_scan(&[response(ct, None, &body, None)]);
        let packed = dpi_scan(&[response(ct, None, &gzip(&body), Some("gzip"))]);
        assert_eq!(plain, packed, "{ct}");
    }
}

fn email_regex() -> Regex {
    Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap()
}

fn ua_regex() -> regex::Regex {
    regex::Regex::new(r"Android (\d+(?:\.\d+){0,2})").unwrap()
}

fn session(client_sizes: &[usize], server_sizes: &[usize]) -> Session {
    let pkt = |len: usize| Packet {
        timestamp: 0,
        src_ip: "10.0.0.1".parse().unwrap(),
        dst_ip: "10.0.0.2".parse().unwrap(),
        src_port: 1,
        dst_port: 2,
        transport: Transport::Tcp,
        tcp_flags: TcpFlags::ACK,
        payload: vec![0; len],
    };
    Session {
        session_id: "s-000000".into(),
        subject_id: "s".into(),
        five_tuple: FiveTuple {
            client_ip: "10.0.0.1".parse().unwrap(),
            client_port: 1,
            server_ip: "10.0.0.2".parse().unwrap(),
            server_port: 2,
            transport: Transport::Tcp,
        },
        start_time: 0,
        end_time: 0,
        client_packets: client_sizes.iter().map(|&l| pkt(l)).collect(),
        server_packets: server_sizes.iter().map(|&l| pkt(l)).collect(),
        close_reason: CloseReason::Fin,
        midstream: false,
    }
}

/// Two-pass textbook statistics over nonzero sizes.
fn oracle(sizes: &[usize]) -> [f64; 5] {
    let v: Vec<f64> = sizes.iter().filter(|&&s| s > 0).map(|&s| s as f64).collect();
    if v.is_empty() {
        return [0.0; 5];
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut s = v.clone();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if s.len() % 2 == 1 { s[s.len() / 2] } else { (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0 };
    [s[s.len() - 1], s[0], mean, median, var]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn stat_examples() {
    let f = statistical_features(&session(&[100, 200], &[1000]));
    assert_eq!((f.tx.mean, f.tx.var, f.rx.mean), (150.0, 2500.0, 1000.0));
    assert_eq!((f.bytes_total, f.tx_rx_ratio), (1300, 0.3));
    let f = statistical_features(&session(&[50], &[]));
    assert_eq!((f.rx.max, f.rx.var, f.tx_rx_ratio), (0.0, 0.0, 50.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn stats_match_oracle(
        tx in prop::collection::vec(prop_oneof![1 => Just(0usize), 4 => 1usize..1500], 0..30),
        rx in prop::collection::vec(prop_oneof![1 => Just(0usize), 4 => 1usize..1500], 0..30),
    ) {
        let f = statistical_features(&session(&tx, &rx));
        for (got, want) in [(f.tx, oracle(&tx)), (f.rx, oracle(&rx))] {
            let got = [got.max, got.min, got.mean, got.median, got.var];
            for (g, w) in got.iter().zip(want) {
                prop_assert!(close(*g, w), "{got:?} vs {want:?}");
            }
        }
        let btx: usize = tx.iter().sum();
        let brx: usize = rx.iter().sum();
        prop_assert_eq!(f.bytes_total as usize, btx + brx);
        prop_assert_eq!(f.tx_rx_ratio, btx as f64 / brx.max(1) as f64);
    }

    #[test]
    fn email_matcher_agrees_with_regex(text in "[a-z@._%+\\- A-Z0-9]{0,40}") {
        prop_assert_eq!(contains_email(text.as_bytes()), email_regex().is_match(text.as_bytes()));
    }

    #[test]
    fn user_agent_agrees_with_regex(text in "[a-zA-Z ;/()]{0,10}(Android ?[0-9.]{0,9})?[a-zA-Z ;/()]{0,10}") {
        let want = ua_regex().captures(&text).map(|c| format!("Android {}", &c[1]));
        prop_assert_eq!(parse_user_agent_os(&text), want);
    }

    #[test]
    fn gzip_transparent_on_random_html(
        parts in prop::collection::vec(prop_oneof![
            Just("<form>".to_string()),
            Just("</form>".to_string()),
            Just("<input type=password>".to_string()),
            Just("<input name=user_id>".to_string()),
            Just("a.b@mail.example.com ".to_string()),
            "[a-z <>=\"/]{0,12}",
        ], 0..12)
    ) {
        let body = parts.concat();
        let plain = dpi_scan(&[response("text/html", None, body.as_bytes(), None)]);
        let packed = dpi_scan(&[response("text/html", None, &gzip(body.as_bytes()), Some("gzip"))]);
        prop_assert_eq!(plain, packed);
    }
}
