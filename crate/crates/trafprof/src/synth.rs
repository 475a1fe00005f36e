//! Synthetic desk-scale datasets: per-subject captures with HTTP, TLS, DNS
//! and port-5228 sessions, a labels file, a subject map, a fixture store
//! and a ground-truth sidecar of per-session values.
//!
//! Each planted effect shifts one feature family for subjects holding a
//! given class. Everything derives from `SynthSpec::seed`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trafprof_core::dataset::FeatureCategory;
use trafprof_core::domain::{CategorySources, ProviderRecord, Scores, SecurityFlags};
use trafprof_core::ml::rng::mix;
use trafprof_core::ml::DEFAULT_SEED;
use trafprof_core::{FeatureSchema, LabelName, LabelSet, Packet, TcpFlags, Transport};

use crate::config::PipelineConfig;
use crate::formats::{self, FormatError};
use crate::pcap::{create_capture, LINKTYPE_ETHERNET};
use crate::wire::encode_frame;

/// Capture start, 2016-06-01T00:00:00Z, in microseconds.
const EPOCH_US: u64 = 1_464_739_200_000_000;
const MSS: usize = 1400;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Share of visits to the target category's domains.
    Domain,
    /// Login forms and file downloads in HTTP responses.
    Dpi,
    /// Response volume.
    Statistical,
    /// Cookie counts and legacy TLS versions.
    Application,
}

impl Family {
    pub fn category(self) -> FeatureCategory {
        match self {
            Family::Domain => FeatureCategory::Domain,
            Family::Dpi => FeatureCategory::DeepPacketInspection,
            Family::Statistical => FeatureCategory::Statistical,
            Family::Application => FeatureCategory::ApplicationLayer,
        }
    }

    /// Features the family is planted into, in schema order.
    pub fn informative_features(self, schema: &FeatureSchema, target_category: &str) -> Vec<String> {
        let target = format!("category_{}", target_category.to_ascii_lowercase());
        let prefixes: &[&str] = match self {
            Family::Domain => return schema.names().filter(|n| *n == target).map(str::to_string).collect(),
            Family::Dpi => &["form_count_", "has_password_field_", "has_username_field_", "downloaded_file_count_"],
            Family::Statistical => &["bytes_", "rx_pkt_", "tx_rx_ratio_"],
            Family::Application => &["cookie_count_", "tls_version_"],
        };
        schema.names().filter(|n| prefixes.iter().any(|p| n.starts_with(p))).map(str::to_string).collect()
    }
}

impl FromStr for Family {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "domain" => Ok(Family::Domain),
            "dpi" => Ok(Family::Dpi),
            "statistical" | "stat" => Ok(Family::Statistical),
            "application" | "app" => Ok(Family::Application),
            _ => Err(SynthError::InvalidSpec(format!("unknown feature family `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub label: LabelName,
    pub class: String,
    pub family: Family,
    /// In [0, 1].
    pub effect_size: f64,
}

impl FromStr for PlantedEffect {
    type Err = SynthError;

    /// `label:class:family:size`, e.g. `gender:Female:domain:0.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [label, class, family, size] = parts[..] else {
            return Err(SynthError::InvalidSpec(format!("effect `{s}`: expected label:class:family:size")));
        };
        Ok(PlantedEffect {
            label: label.parse().map_err(|e| SynthError::InvalidSpec(format!("effect `{s}`: {e}")))?,
            class: class.to_string(),
            family: family.parse()?,
            effect_size: size
                .parse()
                .map_err(|_| SynthError::InvalidSpec(format!("effect `{s}`: bad size `{size}`")))?,
        })
    }
}

impl fmt::Display for PlantedEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{:?}:{}", self.label, self.class, self.family, self.effect_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    /// Inclusive range.
    pub sessions_per_subject: (usize, usize),
    pub planted_effects: Vec<PlantedEffect>,
    /// Canonical category the domain family shifts visits towards.
    pub target_category: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 20,
            sessions_per_subject: (20, 40),
            planted_effects: Vec::new(),
            target_category: "NEWS".into(),
            seed: DEFAULT_SEED,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_subjects < 2 {
            return invalid(format!("need at least 2 subjects, got {}", self.n_subjects));
        }
        let (lo, hi) = self.sessions_per_subject;
        if lo == 0 || lo > hi {
            return invalid(format!("bad sessions_per_subject range {lo}..={hi}"));
        }
        if !CATEGORIES.iter().any(|(_, c, _)| *c == self.target_category) {
            return invalid(format!("target category `{}` has no synthetic domains", self.target_category));
        }
        for e in &self.planted_effects {
            if e.label.class_index(&e.class).is_none() {
                return invalid(format!("`{}` is not a class of {}", e.class, e.label));
            }
            if !(0.0..=1.0).contains(&e.effect_size) {
                return invalid(format!("effect size {} outside [0, 1]", e.effect_size));
            }
        }
        Ok(())
    }
}

/// (source_a label, canonical category, source_b label).
const CATEGORIES: [(&str, &str, &str); 12] = [
    ("search", "SEARCH", "searchengines"),
    ("news", "NEWS", "newsandmedia"),
    ("social", "SOCIAL_NETWORK", "socialnetworking"),
    ("shopping", "SHOPPING", "ecommerce"),
    ("games", "GAMES", "onlinegames"),
    ("sports", "SPORTS", "sport"),
    ("finance", "FINANCE", "banking"),
    ("travel", "TRAVEL", "hotels"),
    ("webmail", "EMAIL", "mail"),
    ("streaming", "STREAMING_MEDIA", "onlinevideo"),
    ("music", "MUSIC", "radio"),
    ("health", "HEALTH", "fitness"),
];

const DOMAINS_PER_CATEGORY: usize = 6;
const UNLISTED_DOMAINS: usize = 8;
const HOST_PREFIXES: [&str; 4] = ["www", "m", "api", "static"];
const ANDROID_VERSIONS: [&str; 8] = ["2.3.6", "4.1.2", "4.4.2", "5.0.1", "5.1.1", "6.0", "7.0", "8.1.0"];
const WORDS: [&str; 16] = [
    "market", "weather", "update", "report", "video", "local", "story", "review", "score", "travel", "deal", "photo",
    "league", "forecast", "recipe", "guide",
];

#[derive(Clone, Debug)]
struct SiteDomain {
    name: String,
    category: Option<usize>,
    ip: Ipv4Addr,
}

fn domain_pool() -> Vec<SiteDomain> {
    let mut pool = Vec::new();
    for (c, (label, _, _)) in CATEGORIES.iter().enumerate() {
        for j in 0..DOMAINS_PER_CATEGORY {
            pool.push(SiteDomain { name: format!("{label}{j}.example"), category: Some(c), ip: Ipv4Addr::UNSPECIFIED });
        }
    }
    for j in 0..UNLISTED_DOMAINS {
        pool.push(SiteDomain { name: format!("unlisted{j}.example"), category: None, ip: Ipv4Addr::UNSPECIFIED });
    }
    for (i, d) in pool.iter_mut().enumerate() {
        d.ip = Ipv4Addr::new(198, 18, (i / 250) as u8, (i % 250 + 1) as u8);
    }
    pool
}

/// Fixture records for the listed domains, keyed by registrable domain.
fn fixture_store(pool: &[SiteDomain], rng: &mut ChaCha8Rng) -> BTreeMap<String, ProviderRecord> {
    let mut out = BTreeMap::new();
    for d in pool {
        let Some(c) = d.category else { continue };
        let (a, _, b) = CATEGORIES[c];
        let score = |rng: &mut ChaCha8Rng| rng.gen_bool(0.85).then(|| rng.gen_range(20..=100u8));
        let record = ProviderRecord {
            rank: Some(10f64.powf(rng.gen_range(1.0..6.0)) as u32),
            scores: Scores { good_site: score(rng), trustworthiness: score(rng), child_safety: score(rng) },
            flags: SecurityFlags {
                scam: rng.gen_bool(0.03),
                spam: rng.gen_bool(0.05),
                malware_or_viruses: rng.gen_bool(0.02),
                privacy_risks: rng.gen_bool(0.08),
                phishing: rng.gen_bool(0.02),
            },
            categories: CategorySources {
                source_a: rng.gen_bool(0.9).then(|| a.to_string()),
                source_b: rng.gen_bool(0.6).then(|| b.to_string()),
            },
        };
        out.insert(d.name.clone(), record);
    }
    out
}

/// Expected per-session values, for parser oracle tests.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub subject_id: String,
    pub transport: String,
    pub server_port: u16,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
    /// `http`, `https` or `other`.
    pub protocol: String,
    pub domain_name: Option<String>,
    pub cookie_count: Option<u32>,
    pub content_type: Option<String>,
    pub os_version: Option<String>,
    pub tls_version: Option<String>,
    pub cert_expired: Option<bool>,
    pub cert_self_signed: Option<bool>,
    pub form_count: Option<u32>,
    pub has_email_field: Option<bool>,
    pub has_username_field: Option<bool>,
    pub has_password_field: Option<bool>,
    pub downloaded_file_count: Option<u32>,
}

/// Per-subject behaviour, after planted effects.
struct Profile {
    ip: Ipv4Addr,
    os: &'static str,
    category_weights: Vec<f64>,
    target_share: f64,
    form_rate: f64,
    download_rate: f64,
    volume_scale: f64,
    extra_cookies: u32,
    legacy_tls_rate: f64,
}

struct SessionWriter<'a> {
    rng: &'a mut ChaCha8Rng,
    subject: &'a str,
    client: IpAddr,
    clock: u64,
    next_port: u16,
    packets: Vec<Packet>,
}

impl SessionWriter<'_> {
    fn tick(&mut self) -> u64 {
        self.clock += self.rng.gen_range(200..40_000);
        self.clock
    }

    fn port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if p >= 60_999 { 32_768 } else { p + 1 };
        p
    }

    fn push(&mut self, from_client: bool, server: (IpAddr, u16), client_port: u16, t: Transport, flags: TcpFlags, payload: &[u8]) {
        let timestamp = self.tick();
        let (src_ip, dst_ip, src_port, dst_port) = if from_client {
            (self.client, server.0, client_port, server.1)
        } else {
            (server.0, self.client, server.1, client_port)
        };
        let tcp_flags = if t == Transport::Tcp { flags } else { TcpFlags::empty() };
        self.packets.push(Packet { timestamp, src_ip, dst_ip, src_port, dst_port, transport: t, tcp_flags, payload: payload.to_vec() });
    }

    /// Handshake, alternating client/server messages split at the MSS, then
    /// a client FIN; the server's FIN and the last ACK follow the close.
    fn tcp_session(&mut self, server: (IpAddr, u16), messages: &[(bool, Vec<u8>)]) -> (u64, u64) {
        let cport = self.port();
        let tcp = Transport::Tcp;
        self.push(true, server, cport, tcp, TcpFlags::SYN, &[]);
        self.push(false, server, cport, tcp, TcpFlags::SYN | TcpFlags::ACK, &[]);
        self.push(true, server, cport, tcp, TcpFlags::ACK, &[]);
        let (mut tx, mut rx) = (0, 0);
        for (from_client, bytes) in messages {
            for chunk in bytes.chunks(MSS) {
                self.push(*from_client, server, cport, tcp, TcpFlags::PSH | TcpFlags::ACK, chunk);
            }
            if *from_client {
                tx += bytes.len() as u64;
            } else {
                rx += bytes.len() as u64;
            }
        }
        self.push(true, server, cport, tcp, TcpFlags::FIN | TcpFlags::ACK, &[]);
        self.push(false, server, cport, tcp, TcpFlags::FIN | TcpFlags::ACK, &[]);
        self.push(true, server, cport, tcp, TcpFlags::ACK, &[]);
        (tx, rx)
    }
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn gzip(data: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(data).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

fn text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| *WORDS.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

struct Page {
    head_type: &'static str,
    media: &'static str,
    body: Vec<u8>,
    disposition: Option<String>,
    forms: u32,
    email: bool,
    username: bool,
    password: bool,
    download: bool,
}

fn page(rng: &mut ChaCha8Rng, p: &Profile) -> Page {
    let mut out = Page {
        head_type: "",
        media: "",
        body: Vec::new(),
        disposition: None,
        forms: 0,
        email: false,
        username: false,
        password: false,
        download: false,
    };
    let scale = p.volume_scale;
    if rng.gen_bool(p.download_rate) {
        let len = (rng.gen_range(20_000..120_000) as f64 * scale) as usize;
        out.head_type = "application/vnd.android.package-archive";
        out.media = out.head_type;
        out.body = (0..len).map(|_| rng.gen()).collect();
        out.disposition = Some(format!("attachment; filename=\"app{}.apk\"", rng.gen_range(0..100)));
        out.download = true;
        return out;
    }
    match rng.gen_range(0..20) {
        0..=9 => {
            out.head_type = "text/html; charset=utf-8";
            out.media = "text/html";
            let mut html = String::from("<!DOCTYPE html><html><head><title>");
            html.push_str(&text(rng, 3));
            html.push_str("</title></head><body>");
            let paragraphs = ((rng.gen_range(2..12) as f64) * scale).ceil() as usize;
            for _ in 0..paragraphs {
                html.push_str("<p>");
                html.push_str(&text(rng, 40));
                html.push_str("</p>");
            }
            if rng.gen_bool(p.form_rate) {
                html.push_str("<form action=\"/login\" method=\"post\"><input type=\"text\" name=\"username\"><input type=\"password\" name=\"password\"><input type=\"submit\" value=\"Sign in\"></form>");
                out.forms += 1;
                out.username = true;
                out.password = true;
            }
            if rng.gen_bool(0.15) {
                html.push_str("<form action=\"/subscribe\"><input type=\"email\" name=\"contact\"></form>");
                out.forms += 1;
                out.email = true;
            }
            if rng.gen_bool(0.2) {
                html.push_str("<form action=\"/search\"><input type=\"text\" name=\"q\"></form>");
                out.forms += 1;
            }
            html.push_str("</body></html>");
            out.body = html.into_bytes();
        }
        10..=14 => {
            out.head_type = "application/json";
            out.media = "application/json";
            let items: Vec<String> = (0..((rng.gen_range(1..30) as f64) * scale).ceil() as usize)
                .map(|i| format!("{{\"id\":{i},\"title\":\"{}\",\"score\":{}}}", text(rng, 4), rng.gen_range(0..1000)))
                .collect();
            out.body = format!("{{\"items\":[{}]}}", items.join(",")).into_bytes();
        }
        15..=17 => {
            out.head_type = "image/png";
            out.media = "image/png";
            let len = (rng.gen_range(2_000..40_000) as f64 * scale) as usize;
            out.body = (0..len).map(|_| rng.gen()).collect();
        }
        _ => {
            out.head_type = "application/javascript";
            out.media = "application/javascript";
            let words = (rng.gen_range(20..400) as f64 * scale) as usize;
            out.body = format!("var t = \"{}\";", text(rng, words)).into_bytes();
        }
    }
    out
}

fn http_exchange(rng: &mut ChaCha8Rng, p: &Profile, host: &str, truth: &mut GroundTruth) -> Vec<(bool, Vec<u8>)> {
    let mut messages = Vec::new();
    let mut max_cookies = 0;
    let mut first_media = None;
    let mut dpi = (0u32, false, false, false, 0u32);
    let ua = if rng.gen_bool(0.7) {
        format!("Dalvik/2.1.0 (Linux; U; Android {}; SM-G900F Build/LRX21T)", p.os)
    } else {
        format!("Mozilla/5.0 (Linux; Android {}; Nexus 5 Build/MOB30Y) AppleWebKit/537.36 Chrome/50.0 Mobile", p.os)
    };
    for _ in 0..rng.gen_range(1..=2) {
        let cookies = rng.gen_range(0..=3) + p.extra_cookies;
        max_cookies = max_cookies.max(cookies);
        let mut req = format!("GET /{} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {ua}\r\nAccept-Encoding: gzip\r\n", text(rng, 1));
        if cookies > 0 {
            let pairs: Vec<String> = (0..cookies).map(|i| format!("c{i}={}", rng.gen_range(1000..99_999))).collect();
            req.push_str(&format!("Cookie: {}\r\n", pairs.join("; ")));
        }
        req.push_str("\r\n");
        messages.push((true, req.into_bytes()));

        let pg = page(rng, p);
        first_media.get_or_insert(pg.media);
        let textual = !pg.download && pg.media != "image/png";
        let (body, encoding) = if textual && rng.gen_bool(0.4) { (gzip(&pg.body), true) } else { (pg.body, false) };
        let mut head = format!("HTTP/1.1 200 OK\r\nContent-Type: {}\r\nContent-Length: {}\r\n", pg.head_type, body.len());
        if encoding {
            head.push_str("Content-Encoding: gzip\r\n");
        }
        if let Some(d) = &pg.disposition {
            head.push_str(&format!("Content-Disposition: {d}\r\n"));
        }
        head.push_str("\r\n");
        let mut resp = head.into_bytes();
        resp.extend_from_slice(&body);
        messages.push((false, resp));
        dpi.0 += pg.forms;
        dpi.1 |= pg.email;
        dpi.2 |= pg.username;
        dpi.3 |= pg.password;
        dpi.4 += u32::from(pg.download);
    }
    truth.protocol = "http".into();
    truth.domain_name = Some(host.to_string());
    truth.cookie_count = Some(max_cookies);
    truth.content_type = first_media.map(str::to_string);
    truth.os_version = Some(format!("Android {}", p.os));
    truth.form_count = Some(dpi.0);
    truth.has_email_field = Some(dpi.1);
    truth.has_username_field = Some(dpi.2);
    truth.has_password_field = Some(dpi.3);
    truth.downloaded_file_count = Some(dpi.4);
    messages
}

fn der(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = vec![tag];
    let n = content.len();
    if n < 0x80 {
        out.push(n as u8);
    } else if n < 0x100 {
        out.extend_from_slice(&[0x81, n as u8]);
    } else {
        out.extend_from_slice(&[0x82, (n >> 8) as u8, n as u8]);
    }
    out.extend_from_slice(content);
    out
}

fn der_seq(parts: &[Vec<u8>]) -> Vec<u8> {
    der(0x30, &parts.concat())
}

fn der_name(cn: &str) -> Vec<u8> {
    let cn_oid = der(0x06, &[0x55, 0x04, 0x03]);
    der_seq(&[der(0x31, &der_seq(&[cn_oid, der(0x0c, cn.as_bytes())]))])
}

/// Minimal X.509 certificate with the fields the TLS parser reads.
fn certificate(rng: &mut ChaCha8Rng, host: &str, self_signed: bool, expired: bool) -> Vec<u8> {
    let sha256_rsa = der_seq(&[der(0x06, &[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x01, 0x0b]), der(0x05, &[])]);
    let not_after = if expired { "150101000000Z" } else { "300101000000Z" };
    let issuer = if self_signed { der_name(host) } else { der_name("Synthetic Root CA") };
    let mut key = vec![0x00, 0x04];
    key.extend((0..64).map(|_| rng.gen::<u8>()));
    let spki = der_seq(&[
        der_seq(&[der(0x06, &[0x2a, 0x86, 0x48, 0xce, 0x3d, 0x02, 0x01]), der(0x06, &[0x2a, 0x86, 0x48, 0xce, 0x3d, 0x03, 0x01, 0x07])]),
        der(0x03, &key),
    ]);
    let tbs = der_seq(&[
        der(0xa0, &der(0x02, &[2])),
        der(0x02, &[rng.gen_range(1..127)]),
        sha256_rsa.clone(),
        issuer,
        der_seq(&[der(0x17, b"140101000000Z"), der(0x17, not_after.as_bytes())]),
        der_name(host),
        spki,
    ]);
    let mut sig = vec![0x00];
    sig.extend((0..64).map(|_| rng.gen::<u8>()));
    der_seq(&[tbs, sha256_rsa, der(0x03, &sig)])
}

fn handshake(kind: u8, body: &[u8]) -> Vec<u8> {
    let n = body.len();
    let mut out = vec![kind, (n >> 16) as u8, (n >> 8) as u8, n as u8];
    out.extend_from_slice(body);
    out
}

fn record(content_type: u8, version: u16, fragment: &[u8]) -> Vec<u8> {
    let mut out = vec![content_type];
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&(fragment.len() as u16).to_be_bytes());
    out.extend_from_slice(fragment);
    out
}

fn client_hello(rng: &mut ChaCha8Rng, sni: Option<&str>) -> Vec<u8> {
    let mut body = vec![0x03, 0x03];
    body.extend((0..32).map(|_| rng.gen::<u8>()));
    body.extend_from_slice(&[0, 0, 4, 0xc0, 0x2f, 0x00, 0x9c, 1, 0]);
    let mut exts = Vec::new();
    if let Some(name) = sni {
        let n = name.len() as u16;
        exts.extend_from_slice(&[0, 0]);
        exts.extend_from_slice(&(n + 5).to_be_bytes());
        exts.extend_from_slice(&(n + 3).to_be_bytes());
        exts.push(0);
        exts.extend_from_slice(&n.to_be_bytes());
        exts.extend_from_slice(name.as_bytes());
    }
    exts.extend_from_slice(&[0x00, 0x0b, 0x00, 0x02, 0x01, 0x00]);
    body.extend_from_slice(&(exts.len() as u16).to_be_bytes());
    body.extend_from_slice(&exts);
    record(0x16, 0x0301, &handshake(1, &body))
}

fn tls_exchange(rng: &mut ChaCha8Rng, p: &Profile, host: &str, truth: &mut GroundTruth) -> Vec<(bool, Vec<u8>)> {
    let sni = rng.gen_bool(0.95).then_some(host);
    let version: u16 = if rng.gen_bool(p.legacy_tls_rate) { *[0x0301u16, 0x0302].choose(rng).expect("non-empty") } else { 0x0303 };
    let self_signed = rng.gen_bool(0.08);
    let expired = rng.gen_bool(0.06);
    let mut server_hello = version.to_be_bytes().to_vec();
    server_hello.extend((0..32).map(|_| rng.gen::<u8>()));
    server_hello.extend_from_slice(&[0, 0xc0, 0x2f, 0]);
    let cert = certificate(rng, host, self_signed, expired);
    let mut cert_msg = Vec::new();
    let list = cert.len() + 3;
    cert_msg.extend_from_slice(&[(list >> 16) as u8, (list >> 8) as u8, list as u8]);
    cert_msg.extend_from_slice(&[(cert.len() >> 16) as u8, (cert.len() >> 8) as u8, cert.len() as u8]);
    cert_msg.extend_from_slice(&cert);
    let mut flight = handshake(2, &server_hello);
    flight.extend(handshake(11, &cert_msg));
    flight.extend(handshake(14, &[]));
    let server_first = record(0x16, version, &flight);

    let mut client_second = record(0x14, version, &[1]);
    client_second.extend(record(0x16, version, &(0..40).map(|_| rng.gen()).collect::<Vec<u8>>()));
    let mut server_second = record(0x14, version, &[1]);
    server_second.extend(record(0x16, version, &(0..40).map(|_| rng.gen()).collect::<Vec<u8>>()));

    let app = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| {
        let len = (rng.gen_range(lo..hi) as f64 * p.volume_scale) as usize;
        let mut out = Vec::new();
        for chunk in (0..len).map(|_| rng.gen::<u8>()).collect::<Vec<u8>>().chunks(16_000) {
            out.extend(record(0x17, version, chunk));
        }
        out
    };
    let request = app(rng, 200, 1500);
    let response = app(rng, 1000, 60_000);

    truth.protocol = "https".into();
    truth.domain_name = sni.map(str::to_string);
    truth.tls_version = Some(match version {
        0x0301 => "tls1_0",
        0x0302 => "tls1_1",
        _ => "tls1_2",
    }
    .to_string());
    truth.cert_expired = Some(expired);
    truth.cert_self_signed = Some(self_signed);
    vec![
        (true, client_hello(rng, sni)),
        (false, server_first),
        (true, client_second),
        (false, server_second),
        (true, request),
        (false, response),
    ]
}

fn dns_query(rng: &mut ChaCha8Rng, host: &str, response: bool) -> Vec<u8> {
    let id: u16 = rng.gen();
    let mut out = id.to_be_bytes().to_vec();
    out.extend_from_slice(if response { &[0x81, 0x80, 0, 1, 0, 1, 0, 0, 0, 0] } else { &[0x01, 0, 0, 1, 0, 0, 0, 0, 0, 0] });
    for label in host.split('.') {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.extend_from_slice(&[0, 0, 1, 0, 1]);
    if response {
        out.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1, 0, 0, 0x0e, 0x10, 0, 4]);
        out.extend((0..4).map(|_| rng.gen::<u8>()));
    }
    out
}

/// Generated file locations.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub captures_dir: PathBuf,
    pub subject_map: PathBuf,
    pub labels: PathBuf,
    pub fixture_store: PathBuf,
    pub ground_truth: PathBuf,
    pub config: PathBuf,
    pub subjects: Vec<String>,
    pub labels_by_subject: BTreeMap<String, LabelSet>,
}

/// Balanced class assignment: a seeded permutation of subjects dealt
/// round-robin over each label's classes.
fn assign_labels(spec: &SynthSpec, subjects: &[String]) -> BTreeMap<String, LabelSet> {
    let mut indices = vec![[0usize; LabelName::COUNT]; subjects.len()];
    for (li, label) in LabelName::ALL.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 1_000 + li as u64));
        let mut order: Vec<usize> = (0..subjects.len()).collect();
        order.shuffle(&mut rng);
        let k = label.classes().len();
        for (pos, &s) in order.iter().enumerate() {
            indices[s][li] = pos % k;
        }
    }
    subjects
        .iter()
        .zip(indices)
        .map(|(s, idx)| (s.clone(), LabelSet::from_indices(idx).expect("indices in range")))
        .collect()
}

fn profile(rng: &mut ChaCha8Rng, spec: &SynthSpec, index: usize, labels: &LabelSet) -> Profile {
    let mut p = Profile {
        ip: Ipv4Addr::new(10, 1, (index / 250) as u8, (index % 250 + 2) as u8),
        os: ANDROID_VERSIONS.choose(rng).expect("non-empty"),
        category_weights: (0..CATEGORIES.len()).map(|_| rng.gen_range(0.3..1.7)).collect(),
        target_share: 0.0,
        form_rate: rng.gen_range(0.05..0.2),
        download_rate: rng.gen_range(0.01..0.06),
        volume_scale: rng.gen_range(0.8..1.25),
        extra_cookies: 0,
        legacy_tls_rate: rng.gen_range(0.02..0.12),
    };
    for e in &spec.planted_effects {
        if labels.class(e.label) != e.label.classes()[e.label.class_index(&e.class).expect("validated")] {
            continue;
        }
        let s = e.effect_size;
        match e.family {
            Family::Domain => p.target_share = (p.target_share + s).min(1.0),
            Family::Dpi => {
                p.form_rate = (p.form_rate + 0.7 * s).min(1.0);
                p.download_rate = (p.download_rate + 0.3 * s).min(1.0);
            }
            Family::Statistical => p.volume_scale *= 1.0 + 3.0 * s,
            Family::Application => {
                p.extra_cookies += (6.0 * s).round() as u32;
                p.legacy_tls_rate = (p.legacy_tls_rate + 0.6 * s).min(1.0);
            }
        }
    }
    p
}

/// Writes the dataset into `dir` and returns where everything went.
pub fn synth_generate(spec: &SynthSpec, dir: &Path) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let io = |p: &Path, e| SynthError::Format(FormatError::io(p, e));
    let captures_dir = dir.join("captures");
    std::fs::create_dir_all(&captures_dir).map_err(|e| io(&captures_dir, e))?;

    let pool = domain_pool();
    let target = CATEGORIES.iter().position(|(_, c, _)| *c == spec.target_category).expect("validated");
    let store = fixture_store(&pool, &mut ChaCha8Rng::seed_from_u64(mix(spec.seed, 7)));
    let width = spec.n_subjects.to_string().len().max(3);
    let subjects: Vec<String> = (0..spec.n_subjects).map(|i| format!("s{:0width$}", i + 1)).collect();
    let labels = assign_labels(spec, &subjects);

    let mut subject_map = String::from("# client_ip\tsubject_id\n");
    let mut truths = Vec::new();
    for (i, subject) in subjects.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, i as u64));
        let p = profile(&mut rng, spec, i, &labels[subject]);
        subject_map.push_str(&format!("{}\t{subject}\n", p.ip));
        let mut w = SessionWriter {
            rng: &mut rng,
            subject,
            client: IpAddr::V4(p.ip),
            clock: EPOCH_US + i as u64 * 3_600_000_000,
            next_port: 40_000,
            packets: Vec::new(),
        };
        let n_sessions = w.rng.gen_range(spec.sessions_per_subject.0..=spec.sessions_per_subject.1);
        for seq in 0..n_sessions {
            w.clock += w.rng.gen_range(500_000..20_000_000);
            let mut truth = GroundTruth {
                session_id: format!("{}-{seq:06}", w.subject),
                subject_id: w.subject.to_string(),
                protocol: "other".into(),
                ..Default::default()
            };
            let site = if w.rng.gen_bool(0.06) {
                &pool[CATEGORIES.len() * DOMAINS_PER_CATEGORY + w.rng.gen_range(0..UNLISTED_DOMAINS)]
            } else {
                let c = if w.rng.gen_bool(p.target_share) { target } else { pick_weighted(w.rng, &p.category_weights) };
                &pool[c * DOMAINS_PER_CATEGORY + w.rng.gen_range(0..DOMAINS_PER_CATEGORY)]
            };
            let host = format!("{}.{}", HOST_PREFIXES.choose(w.rng).expect("non-empty"), site.name);
            let kind = w.rng.gen_range(0..100);
            let (port, (tx, rx)) = if kind < 42 {
                let messages = http_exchange(w.rng, &p, &host, &mut truth);
                (80, w.tcp_session((IpAddr::V4(site.ip), 80), &messages))
            } else if kind < 84 {
                let messages = tls_exchange(w.rng, &p, &host, &mut truth);
                (443, w.tcp_session((IpAddr::V4(site.ip), 443), &messages))
            } else if kind < 94 {
                let server = (IpAddr::V4(Ipv4Addr::new(192, 0, 2, 53)), 53);
                let cport = w.port();
                let q = dns_query(w.rng, &host, false);
                let r = dns_query(w.rng, &host, true);
                w.push(true, server, cport, Transport::Udp, TcpFlags::empty(), &q);
                w.push(false, server, cport, Transport::Udp, TcpFlags::empty(), &r);
                (53, (q.len() as u64, r.len() as u64))
            } else {
                let n = (w.rng.gen_range(100..3000) as f64 * p.volume_scale) as usize;
                let mut push_msg = vec![0u8, 0x2a];
                push_msg.extend((0..n).map(|_| w.rng.gen::<u8>()));
                let messages = vec![(true, vec![0u8, 0x13, 0x37, 0x01, 0x02]), (false, push_msg)];
                (5228, w.tcp_session((IpAddr::V4(Ipv4Addr::new(198, 19, 0, 10)), 5228), &messages))
            };
            truth.transport = if port == 53 { "UDP" } else { "TCP" }.into();
            truth.server_port = port;
            truth.bytes_tx = tx;
            truth.bytes_rx = rx;
            truths.push(truth);
        }
        let path = captures_dir.join(format!("{subject}.pcap"));
        let mut pcap = create_capture(&path, LINKTYPE_ETHERNET).map_err(|e| io(&path, e))?;
        for packet in &w.packets {
            pcap.write_frame(packet.timestamp, &encode_frame(packet)).map_err(|e| io(&path, e))?;
        }
        pcap.into_inner().flush().map_err(|e| io(&path, e))?;
    }

    let out = SynthOutput {
        captures_dir: captures_dir.clone(),
        subject_map: dir.join("subjects.tsv"),
        labels: dir.join("labels.csv"),
        fixture_store: dir.join("fixtures.json"),
        ground_truth: dir.join("ground_truth.jsonl"),
        config: dir.join("pipeline.toml"),
        subjects,
        labels_by_subject: labels,
    };
    std::fs::write(&out.subject_map, subject_map).map_err(|e| io(&out.subject_map, e))?;
    formats::write_labels_csv(&out.labels, &out.labels_by_subject)?;
    formats::write_json(&out.fixture_store, &store)?;
    formats::write_jsonl(&out.ground_truth, "ground_truth", spec, &truths)?;
    let config = PipelineConfig {
        captures: vec!["captures".into()],
        subject_map: "subjects.tsv".into(),
        labels: "labels.csv".into(),
        fixture_store: "fixtures.json".into(),
        output_dir: "out".into(),
        seed: spec.seed,
        ..PipelineConfig::default()
    };
    std::fs::write(&out.config, config.to_toml()).map_err(|e| io(&out.config, e))?;
    Ok(out)
}

pub fn read_ground_truth(path: &Path) -> Result<(SynthSpec, Vec<GroundTruth>), FormatError> {
    formats::read_jsonl(path, "ground_truth")
}

#[cfg(test)]
mod tests {
    use super::*;
    use trafprof_core::Taxonomy;

    #[test]
    fn spec_validation() {
        let spec = |n| SynthSpec { n_subjects: n, ..SynthSpec::default() };
        assert!(matches!(spec(1).validate(), Err(SynthError::InvalidSpec(_))));
        assert!(spec(2).validate().is_ok());
        let bad_class = SynthSpec { planted_effects: vec!["gender:Other:domain:0.5".parse().unwrap()], ..spec(4) };
        assert!(bad_class.validate().is_err());
        assert!("gender:Male:colour:0.5".parse::<PlantedEffect>().is_err());
        let too_big = SynthSpec { planted_effects: vec!["gender:Male:dpi:1.5".parse().unwrap()], ..spec(4) };
        assert!(too_big.validate().is_err());
    }

    #[test]
    fn category_labels_map_through_builtin_taxonomy() {
        let t = Taxonomy::builtin();
        for (a, c, b) in CATEGORIES {
            assert_eq!(t.map(a), Some(c));
            assert_eq!(t.map(b), Some(c));
        }
    }

    #[test]
    fn labels_are_balanced() {
        let spec = SynthSpec { n_subjects: 9, ..SynthSpec::default() };
        let subjects: Vec<String> = (0..9).map(|i| format!("s{i}")).collect();
        let labels = assign_labels(&spec, &subjects);
        for label in LabelName::ALL {
            let k = label.classes().len();
            for c in 0..k {
                let n = labels.values().filter(|l| l.index(label) == c).count();
                assert!(n == 9 / k || n == 9 / k + 1);
            }
        }
    }

    #[test]
    fn certificate_parses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (self_signed, expired) in [(true, false), (false, true)] {
            let cert = certificate(&mut rng, "www.news0.example", self_signed, expired);
            let mut msg = Vec::new();
            let list = cert.len() + 3;
            msg.extend_from_slice(&[(list >> 16) as u8, (list >> 8) as u8, list as u8]);
            msg.extend_from_slice(&[(cert.len() >> 16) as u8, (cert.len() >> 8) as u8, cert.len() as u8]);
            msg.extend_from_slice(&cert);
            let server = record(0x16, 0x0303, &[handshake(2, &[3, 3]), handshake(11, &msg)].concat());
            let client = client_hello(&mut rng, Some("www.news0.example"));
            let s = trafprof_core::tls::parse_tls(&client, &server, EPOCH_US).unwrap();
            assert_eq!(s.sni.as_deref(), Some("www.news0.example"));
            assert_eq!((s.cert_self_signed, s.cert_expired), (Some(self_signed), Some(expired)));
        }
    }
}
