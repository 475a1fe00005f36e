//! On-disk formats of the pipeline's intermediate and final files.
//!
//! JSON-lines files start with a header object carrying `schema_version`
//! and `kind`; CSV and TSV files start with a `# schema_version=N` comment.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trafprof_core::dataset::FeatureTable;
use trafprof_core::labels::LabelError;
use trafprof_core::{LabelName, LabelSet, Session, SessionFeatures, Transport};

pub const SCHEMA_VERSION: u32 = 1;

const NA: &str = "NA";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: expected {expected} schema version {version}, found `{found}`")]
    Schema { path: PathBuf, expected: String, version: u32, found: String },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("labels: {0}")]
    Labels(#[from] LabelError),
}

impl FormatError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        FormatError::Csv { path: path.to_path_buf(), source }
    }

    fn malformed(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Malformed { path: path.to_path_buf(), message: message.into() }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| FormatError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| FormatError::Json { path: path.into(), line: 0, source: e })?;
    out.write_all(b"\n").and_then(|()| out.flush()).map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| FormatError::Json { path: path.into(), line: e.line(), source: e })
}

#[derive(Serialize, Deserialize)]
struct JsonlHeader<M> {
    schema_version: u32,
    kind: String,
    meta: M,
}

/// Writes a header line then one JSON object per record.
pub fn write_jsonl<'a, M, T, I>(path: &Path, kind: &str, meta: &M, records: I) -> Result<(), FormatError>
where
    M: Serialize,
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = create(path)?;
    let json_err = |line, e| FormatError::Json { path: path.into(), line, source: e };
    let header = JsonlHeader { schema_version: SCHEMA_VERSION, kind: kind.to_string(), meta };
    serde_json::to_writer(&mut out, &header).map_err(|e| json_err(1, e))?;
    out.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    for (i, record) in records.into_iter().enumerate() {
        serde_json::to_writer(&mut out, record).map_err(|e| json_err(i + 2, e))?;
        out.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    out.flush().map_err(|e| FormatError::io(path, e))
}

/// Reads a file written by [`write_jsonl`], checking kind and version.
pub fn read_jsonl<M: DeserializeOwned, T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, Vec<T>), FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let schema_err = |found: String| FormatError::Schema {
        path: path.into(),
        expected: kind.to_string(),
        version: SCHEMA_VERSION,
        found,
    };
    let first = lines.next().ok_or_else(|| schema_err("empty file".into()))?.map_err(|e| FormatError::io(path, e))?;
    let header: JsonlHeader<M> =
        serde_json::from_str(&first).map_err(|e| FormatError::Json { path: path.into(), line: 1, source: e })?;
    if header.kind != kind || header.schema_version != SCHEMA_VERSION {
        return Err(schema_err(format!("{} v{}", header.kind, header.schema_version)));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| FormatError::Json { path: path.into(), line: i + 2, source: e })?);
    }
    Ok((header.meta, records))
}

fn version_comment(out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "# schema_version={SCHEMA_VERSION}")
}

/// Consumes the leading version comment of a CSV/TSV text.
fn strip_version_comment<'t>(path: &Path, text: &'t str) -> Result<&'t str, FormatError> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let found = first.trim().strip_prefix("# schema_version=").unwrap_or(first.trim());
    if found != SCHEMA_VERSION.to_string() {
        return Err(FormatError::Schema {
            path: path.into(),
            expected: "csv".into(),
            version: SCHEMA_VERSION,
            found: found.to_string(),
        });
    }
    Ok(rest)
}

pub const SESSION_LOG_COLUMNS: [&str; 13] = [
    "session_id",
    "subject_id",
    "transport",
    "client_ip",
    "client_port",
    "server_ip",
    "server_port",
    "start_us",
    "end_us",
    "client_packets",
    "server_packets",
    "close_reason",
    "midstream",
];

pub fn write_session_log(path: &Path, sessions: &[Session]) -> Result<(), FormatError> {
    let mut out = create(path)?;
    let mut write = || -> io::Result<()> {
        version_comment(&mut out)?;
        writeln!(out, "{}", SESSION_LOG_COLUMNS.join("\t"))?;
        for s in sessions {
            let t = &s.five_tuple;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.session_id,
                s.subject_id,
                transport_name(t.transport),
                t.client_ip,
                t.client_port,
                t.server_ip,
                t.server_port,
                s.start_time,
                s.end_time,
                s.client_packets.len(),
                s.server_packets.len(),
                s.close_reason.as_str(),
                s.midstream,
            )?;
        }
        out.flush()
    };
    write().map_err(|e| FormatError::io(path, e))
}

pub const FEATURE_CSV_COLUMNS: [&str; 36] = [
    "session_id",
    "subject_id",
    "transport",
    "server_port",
    "start_us",
    "bytes_total",
    "bytes_tx",
    "bytes_rx",
    "tx_rx_ratio",
    "tx_pkt_max",
    "tx_pkt_min",
    "tx_pkt_mean",
    "tx_pkt_median",
    "tx_pkt_var",
    "rx_pkt_max",
    "rx_pkt_min",
    "rx_pkt_mean",
    "rx_pkt_median",
    "rx_pkt_var",
    "protocol",
    "tls_version",
    "cert_expired",
    "cert_self_signed",
    "cookie_count",
    "content_type",
    "os_version",
    "form_count",
    "has_email_field",
    "has_username_field",
    "has_password_field",
    "downloaded_file_count",
    "downloaded_file_types",
    "json_documents",
    "xml_documents",
    "undecodable_bodies",
    "domain_name",
];

fn transport_name(t: Transport) -> &'static str {
    match t {
        Transport::Tcp => "TCP",
        Transport::Udp => "UDP",
        Transport::Other => "OTHER",
    }
}

fn na<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |v| v.to_string())
}

/// One row per session in [`FEATURE_CSV_COLUMNS`] order.
pub fn feature_row(f: &SessionFeatures) -> Vec<String> {
    let s = &f.stat;
    let app = f.app.as_ref();
    let dpi = f.dpi.as_ref();
    let mut row = vec![
        f.session_id.clone(),
        f.subject_id.clone(),
        transport_name(f.transport).to_string(),
        f.server_port.to_string(),
        f.start_time.to_string(),
        s.bytes_total.to_string(),
        s.bytes_tx.to_string(),
        s.bytes_rx.to_string(),
        s.tx_rx_ratio.to_string(),
    ];
    for summary in [&s.tx, &s.rx] {
        row.extend([summary.max, summary.min, summary.mean, summary.median, summary.var].map(|v| v.to_string()));
    }
    row.extend([
        f.protocol().as_str().to_string(),
        na(app.and_then(|a| a.tls_version).map(|v| v.as_str())),
        na(app.and_then(|a| a.cert_expired)),
        na(app.and_then(|a| a.cert_self_signed)),
        na(app.and_then(|a| a.cookie_count)),
        na(app.and_then(|a| a.content_type.clone())),
        na(app.and_then(|a| a.os_version.clone())),
        na(dpi.map(|d| d.form_count)),
        na(dpi.map(|d| d.has_email_field)),
        na(dpi.map(|d| d.has_username_field)),
        na(dpi.map(|d| d.has_password_field)),
        na(dpi.map(|d| d.downloaded_file_count)),
        na(dpi.map(|d| d.downloaded_file_types.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";"))),
        na(dpi.map(|d| d.json_documents)),
        na(dpi.map(|d| d.xml_documents)),
        na(dpi.map(|d| d.undecodable_bodies)),
        na(f.domain_name.clone()),
    ]);
    row
}

pub fn write_feature_csv(path: &Path, features: &[SessionFeatures]) -> Result<(), FormatError> {
    let mut out = create(path)?;
    version_comment(&mut out).map_err(|e| FormatError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FEATURE_CSV_COLUMNS).map_err(|e| FormatError::csv(path, e))?;
    for f in features {
        w.write_record(feature_row(f)).map_err(|e| FormatError::csv(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// `subject_id`, the features in schema order, then the label columns.
pub fn write_dataset_csv(path: &Path, table: &FeatureTable) -> Result<(), FormatError> {
    let mut out = create(path)?;
    version_comment(&mut out).map_err(|e| FormatError::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    let header = std::iter::once("subject_id")
        .chain(table.feature_names.iter().map(String::as_str))
        .chain(LabelName::ALL.iter().map(|l| l.column()));
    w.write_record(header).map_err(|e| FormatError::csv(path, e))?;
    for ((id, row), labels) in table.subject_ids.iter().zip(&table.rows).zip(&table.labels) {
        let record = std::iter::once(id.clone())
            .chain(row.iter().map(f64::to_string))
            .chain(LabelName::ALL.iter().map(|&l| labels.class(l).to_string()));
        w.write_record(record).map_err(|e| FormatError::csv(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<FeatureTable, FormatError> {
    let text = read_text(path)?;
    let body = strip_version_comment(path, &text)?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(|e| FormatError::csv(path, e))?.clone();
    let n_labels = LabelName::COUNT;
    if header.len() < 1 + n_labels || header.get(0) != Some("subject_id") {
        return Err(FormatError::malformed(path, "header must start with subject_id and end with the label columns"));
    }
    let n_features = header.len() - 1 - n_labels;
    for (i, label) in LabelName::ALL.iter().enumerate() {
        if header.get(1 + n_features + i) != Some(label.column()) {
            return Err(FormatError::malformed(path, format!("expected label column `{}`", label.column())));
        }
    }
    let mut table = FeatureTable {
        feature_names: header.iter().skip(1).take(n_features).map(str::to_string).collect(),
        subject_ids: Vec::new(),
        rows: Vec::new(),
        labels: Vec::new(),
    };
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| FormatError::csv(path, e))?;
        let row = record
            .iter()
            .skip(1)
            .take(n_features)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| FormatError::malformed(path, format!("row {}: non-numeric feature value", line + 1)))?;
        let labels = LabelSet::from_pairs(LabelName::ALL.iter().enumerate().map(|(i, &l)| (l, &record[1 + n_features + i])))?;
        table.subject_ids.push(record[0].to_string());
        table.rows.push(row);
        table.labels.push(labels);
    }
    Ok(table)
}

/// Questionnaire export: a `subject_id` column plus one column per label,
/// extra columns ignored. Keyed by subject.
pub fn read_labels_csv(path: &Path) -> Result<BTreeMap<String, LabelSet>, FormatError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FormatError::csv(path, e))?;
    let header = r.headers().map_err(|e| FormatError::csv(path, e))?.clone();
    let position = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
    let id_col = position("subject_id").ok_or_else(|| FormatError::malformed(path, "missing subject_id column"))?;
    let label_cols = LabelName::ALL
        .iter()
        .map(|&l| position(l.column()).map(|c| (l, c)).ok_or(LabelError::Missing(l)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| FormatError::csv(path, e))?;
        let id = record.get(id_col).unwrap_or_default().to_string();
        let labels = LabelSet::from_pairs(label_cols.iter().map(|&(l, c)| (l, record.get(c).unwrap_or_default())))?;
        if out.insert(id.clone(), labels).is_some() {
            return Err(FormatError::malformed(path, format!("subject `{id}` listed twice")));
        }
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, labels: &BTreeMap<String, LabelSet>) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let header = std::iter::once("subject_id").chain(LabelName::ALL.iter().map(|l| l.column()));
    w.write_record(header).map_err(|e| FormatError::csv(path, e))?;
    for (id, set) in labels {
        let record = std::iter::once(id.as_str()).chain(LabelName::ALL.iter().map(|&l| set.class(l)));
        w.write_record(record).map_err(|e| FormatError::csv(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}
