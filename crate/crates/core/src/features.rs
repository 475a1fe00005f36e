//! Per-session feature extraction: traffic-volume statistics, application
//! layer attributes and payload inspection, plus the domain name used for
//! enrichment.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dpi::{dpi_scan, DpiScan};
use crate::http::{looks_like_http_request, parse_http, parse_user_agent_os, HttpTransaction, NotHttp};
use crate::packet::{Packet, Transport};
use crate::session::Session;
use crate::stats::Summary;
use crate::tls::{looks_like_tls, parse_tls, TlsSummary, TlsVersion};

pub type DpiFeatures = DpiScan;

/// Volume statistics over payload sizes. `tx` is client to server.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatFeatures {
    pub tx: Summary,
    pub rx: Summary,
    pub bytes_total: u64,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
    pub tx_rx_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AppProtocol {
    Http,
    Https,
    Other,
}

impl AppProtocol {
    pub const ALL: [AppProtocol; 3] = [AppProtocol::Http, AppProtocol::Https, AppProtocol::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            AppProtocol::Http => "http",
            AppProtocol::Https => "https",
            AppProtocol::Other => "other",
        }
    }
}

/// TLS fields are set only for HTTPS, cookie/content-type/OS only for HTTP.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppFeatures {
    pub protocol: AppProtocol,
    pub tls_version: Option<TlsVersion>,
    pub cert_expired: Option<bool>,
    pub cert_self_signed: Option<bool>,
    pub cookie_count: Option<u32>,
    /// Lower-cased media type of the first response, parameters stripped.
    pub content_type: Option<String>,
    pub os_version: Option<String>,
}

impl AppFeatures {
    fn https(tls: &TlsSummary) -> Self {
        AppFeatures {
            protocol: AppProtocol::Https,
            tls_version: Some(tls.version),
            cert_expired: tls.cert_expired,
            cert_self_signed: tls.cert_self_signed,
            cookie_count: None,
            content_type: None,
            os_version: None,
        }
    }

    fn http(transactions: &[HttpTransaction]) -> Self {
        AppFeatures {
            protocol: AppProtocol::Http,
            tls_version: None,
            cert_expired: None,
            cert_self_signed: None,
            cookie_count: transactions.iter().map(|t| t.request_cookie_count).max(),
            content_type: transactions.iter().find_map(|t| t.response_content_type.as_deref()).map(|ct| {
                ct.split(';').next().unwrap_or_default().trim().to_ascii_lowercase()
            }),
            os_version: transactions.iter().find_map(|t| t.user_agent.as_deref().and_then(parse_user_agent_os)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub session_id: String,
    pub subject_id: String,
    pub transport: Transport,
    pub server_port: u16,
    pub start_time: u64,
    pub stat: StatFeatures,
    pub app: Option<AppFeatures>,
    pub dpi: Option<DpiFeatures>,
    pub domain_name: Option<String>,
    pub bytes_total: u64,
}

impl SessionFeatures {
    pub fn protocol(&self) -> AppProtocol {
        self.app.as_ref().map_or(AppProtocol::Other, |a| a.protocol)
    }
}

/// Payload-size statistics. Zero-length packets do not contribute a size;
/// variance is the population variance.
pub fn statistical_features(session: &Session) -> StatFeatures {
    let sizes = |packets: &[Packet]| -> Vec<f64> {
        packets.iter().filter(|p| p.payload_len() > 0).map(|p| p.payload_len() as f64).collect()
    };
    let bytes = |packets: &[Packet]| -> u64 { packets.iter().map(|p| p.payload_len() as u64).sum() };
    let bytes_tx = bytes(&session.client_packets);
    let bytes_rx = bytes(&session.server_packets);
    StatFeatures {
        tx: Summary::of(&sizes(&session.client_packets)),
        rx: Summary::of(&sizes(&session.server_packets)),
        bytes_total: bytes_tx + bytes_rx,
        bytes_tx,
        bytes_rx,
        tx_rx_ratio: bytes_tx as f64 / bytes_rx.max(1) as f64,
    }
}

/// In-order concatenation of payloads.
pub fn stream_bytes(packets: &[Packet]) -> Vec<u8> {
    let mut out = Vec::with_capacity(packets.iter().map(Packet::payload_len).sum());
    for p in packets {
        out.extend_from_slice(&p.payload);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Detected {
    Http,
    Tls,
}

/// Content shape first, well-known ports as the fallback.
fn detect(session: &Session, client: &[u8]) -> Option<Detected> {
    if session.five_tuple.transport != Transport::Tcp {
        return None;
    }
    if looks_like_http_request(client) {
        return Some(Detected::Http);
    }
    if looks_like_tls(client) {
        return Some(Detected::Tls);
    }
    match session.five_tuple.server_port {
        80 | 8080 => Some(Detected::Http),
        443 => Some(Detected::Tls),
        _ => None,
    }
}

pub fn extract_session_features(session: &Session) -> SessionFeatures {
    let stat = statistical_features(session);
    let mut out = SessionFeatures {
        session_id: session.session_id.clone(),
        subject_id: session.subject_id.clone(),
        transport: session.five_tuple.transport,
        server_port: session.five_tuple.server_port,
        start_time: session.start_time,
        stat,
        app: None,
        dpi: None,
        domain_name: None,
        bytes_total: stat.bytes_total,
    };
    let client = stream_bytes(&session.client_packets);
    let Some(detected) = detect(session, &client) else { return out };
    let server = stream_bytes(&session.server_packets);

    let try_tls = |out: &mut SessionFeatures| {
        if let Ok(tls) = parse_tls(&client, &server, session.start_time) {
            out.app = Some(AppFeatures::https(&tls));
            out.domain_name = tls.sni.clone();
        }
    };
    match detected {
        Detected::Http => match parse_http(&client, &server) {
            Ok(txs) if !txs.is_empty() => {
                out.app = Some(AppFeatures::http(&txs));
                out.dpi = Some(dpi_scan(&txs));
                out.domain_name = txs.iter().find_map(|t| t.host.clone()).filter(|h| !h.is_empty());
            }
            Ok(_) => {}
            Err(NotHttp) => try_tls(&mut out),
        },
        Detected::Tls => try_tls(&mut out),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::TcpFlags;
    use crate::session::{CloseReason, FiveTuple};
    use alloc::vec;

    fn packet(from_client: bool, payload: &[u8], transport: Transport, server_port: u16) -> Packet {
        let (c, s) = ("10.0.0.5".parse().unwrap(), "192.0.2.1".parse().unwrap());
        let (src_ip, dst_ip, src_port, dst_port) =
            if from_client { (c, s, 40000, server_port) } else { (s, c, server_port, 40000) };
        Packet {
            timestamp: 1,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            transport,
            tcp_flags: if transport == Transport::Tcp { TcpFlags::ACK } else { TcpFlags::empty() },
            payload: payload.to_vec(),
        }
    }

    fn session(client: Vec<Packet>, server: Vec<Packet>, transport: Transport, server_port: u16) -> Session {
        Session {
            session_id: "s-1".into(),
            subject_id: "s".into(),
            five_tuple: FiveTuple {
                client_ip: "10.0.0.5".parse().unwrap(),
                client_port: 40000,
                server_ip: "192.0.2.1".parse().unwrap(),
                server_port,
                transport,
            },
            start_time: 1,
            end_time: 1,
            client_packets: client,
            server_packets: server,
            close_reason: CloseReason::Fin,
            midstream: false,
        }
    }

    fn sized(from_client: bool, n: usize) -> Packet {
        packet(from_client, &vec![b'x'; n], Transport::Tcp, 9999)
    }

    #[test]
    fn two_tx_one_rx() {
        let s = session(vec![sized(true, 100), sized(true, 200), sized(true, 0)], vec![sized(false, 300)], Transport::Tcp, 9999);
        let f = statistical_features(&s);
        assert_eq!(f.tx, Summary { max: 200.0, min: 100.0, mean: 150.0, median: 150.0, var: 2500.0 });
        assert_eq!(f.rx.mean, 300.0);
        assert_eq!((f.bytes_tx, f.bytes_rx, f.bytes_total), (300, 300, 600));
        assert_eq!(f.tx_rx_ratio, 1.0);
    }

    #[test]
    fn no_rx_ratio_is_tx_bytes() {
        let s = session(vec![sized(true, 80)], vec![], Transport::Tcp, 9999);
        let f = statistical_features(&s);
        assert_eq!(f.tx.var, 0.0);
        assert_eq!(f.rx, Summary::default());
        assert_eq!(f.tx_rx_ratio, 80.0);
    }

    #[test]
    fn empty_session_all_zero() {
        let s = session(vec![sized(true, 0)], vec![sized(false, 0)], Transport::Tcp, 9999);
        assert_eq!(statistical_features(&s), StatFeatures::default());
    }

    #[test]
    fn http_session_domain() {
        let req = b"GET / HTTP/1.1\r\nHost: News.Example.org\r\nUser-Agent: Dalvik/2.1.0 (Linux; U; Android 5.0.1)\r\nCookie: a=1\r\n\r\n";
        let resp = b"HTTP/1.1 200 OK\r\nContent-Type: text/html; charset=UTF-8\r\nContent-Length: 6\r\n\r\n<form>";
        let s = session(
            vec![packet(true, req, Transport::Tcp, 80)],
            vec![packet(false, resp, Transport::Tcp, 80)],
            Transport::Tcp,
            80,
        );
        let f = extract_session_features(&s);
        assert_eq!(f.domain_name.as_deref(), Some("news.example.org"));
        let app = f.app.unwrap();
        assert_eq!(app.protocol, AppProtocol::Http);
        assert_eq!(app.cookie_count, Some(1));
        assert_eq!(app.content_type.as_deref(), Some("text/html"));
        assert_eq!(app.os_version.as_deref(), Some("Android 5.0.1"));
        assert!(app.tls_version.is_none());
        assert_eq!(f.dpi.unwrap().form_count, 1);
    }

    #[test]
    fn dns_has_no_app_layer() {
        let s = session(
            vec![packet(true, b"\x12\x34query", Transport::Udp, 53)],
            vec![packet(false, b"\x12\x34answer", Transport::Udp, 53)],
            Transport::Udp,
            53,
        );
        let f = extract_session_features(&s);
        assert!(f.app.is_none() && f.dpi.is_none() && f.domain_name.is_none());
        assert_eq!(f.protocol(), AppProtocol::Other);
    }

    #[test]
    fn port_80_non_http_falls_back_to_tls() {
        let s = session(vec![packet(true, &[0x16, 3, 1, 0, 0], Transport::Tcp, 80)], vec![], Transport::Tcp, 80);
        let f = extract_session_features(&s);
        assert_eq!(f.protocol(), AppProtocol::Https);
        assert!(f.dpi.is_none());
    }

    #[test]
    fn port_443_garbage_has_no_app() {
        let s = session(vec![packet(true, b"\x00\x01", Transport::Tcp, 443)], vec![], Transport::Tcp, 443);
        assert!(extract_session_features(&s).app.is_none());
    }
}
