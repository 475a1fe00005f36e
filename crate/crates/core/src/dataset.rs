//! Per-subject aggregation of session features and learning-dataset
//! assembly.
//!
//! Numeric session attributes become four subject features (average,
//! median, minimum, maximum over the sessions where they are defined).
//! Boolean attributes become the rate of `true` among defined sessions.
//! Nominal attributes become one incidence feature per class. Port volume
//! ratios are appended last. The order is fixed by [`FeatureSchema`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainInfo, Taxonomy, UNKNOWN_CATEGORY};
use crate::features::{AppProtocol, SessionFeatures};
use crate::labels::{LabelName, LabelSet};
use crate::packet::Transport;
use crate::stats;
use crate::tls::TlsVersion;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureCategory {
    Domain,
    DeepPacketInspection,
    Statistical,
    ApplicationLayer,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 4] = [
        FeatureCategory::Domain,
        FeatureCategory::DeepPacketInspection,
        FeatureCategory::Statistical,
        FeatureCategory::ApplicationLayer,
    ];

    pub fn title(self) -> &'static str {
        match self {
            FeatureCategory::Domain => "Domain",
            FeatureCategory::DeepPacketInspection => "Deep packet inspection",
            FeatureCategory::Statistical => "Statistical",
            FeatureCategory::ApplicationLayer => "Application layer",
        }
    }
}

/// A session's features together with the enrichment of its domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrichedSession {
    pub features: SessionFeatures,
    pub domain: Option<DomainInfo>,
}

type NumericFn = fn(&EnrichedSession) -> Option<f64>;
type BinaryFn = fn(&EnrichedSession) -> Option<bool>;
type NominalFn = fn(&EnrichedSession) -> Option<String>;

use FeatureCategory::{ApplicationLayer as App, DeepPacketInspection as Dpi, Domain as Dom, Statistical as Stat};

const NUMERIC: &[(&str, FeatureCategory, NumericFn)] = &[
    ("tx_pkt_max", Stat, |s| Some(s.features.stat.tx.max)),
    ("tx_pkt_min", Stat, |s| Some(s.features.stat.tx.min)),
    ("tx_pkt_mean", Stat, |s| Some(s.features.stat.tx.mean)),
    ("tx_pkt_median", Stat, |s| Some(s.features.stat.tx.median)),
    ("tx_pkt_var", Stat, |s| Some(s.features.stat.tx.var)),
    ("rx_pkt_max", Stat, |s| Some(s.features.stat.rx.max)),
    ("rx_pkt_min", Stat, |s| Some(s.features.stat.rx.min)),
    ("rx_pkt_mean", Stat, |s| Some(s.features.stat.rx.mean)),
    ("rx_pkt_median", Stat, |s| Some(s.features.stat.rx.median)),
    ("rx_pkt_var", Stat, |s| Some(s.features.stat.rx.var)),
    ("bytes_total", Stat, |s| Some(s.features.stat.bytes_total as f64)),
    ("bytes_tx", Stat, |s| Some(s.features.stat.bytes_tx as f64)),
    ("bytes_rx", Stat, |s| Some(s.features.stat.bytes_rx as f64)),
    ("tx_rx_ratio", Stat, |s| Some(s.features.stat.tx_rx_ratio)),
    ("cookie_count", App, |s| s.features.app.as_ref()?.cookie_count.map(f64::from)),
    ("form_count", Dpi, |s| s.features.dpi.as_ref().map(|d| f64::from(d.form_count))),
    ("downloaded_file_count", Dpi, |s| s.features.dpi.as_ref().map(|d| f64::from(d.downloaded_file_count))),
    ("json_documents", Dpi, |s| s.features.dpi.as_ref().map(|d| f64::from(d.json_documents))),
    ("xml_documents", Dpi, |s| s.features.dpi.as_ref().map(|d| f64::from(d.xml_documents))),
    ("popularity_log10_rank", Dom, |s| s.domain.as_ref()?.popularity_rank.map(|r| libm::log10(f64::from(r)))),
    ("score_good_site", Dom, |s| s.domain.as_ref()?.score_good_site.map(f64::from)),
    ("score_trustworthiness", Dom, |s| s.domain.as_ref()?.score_trustworthiness.map(f64::from)),
    ("score_child_safety", Dom, |s| s.domain.as_ref()?.score_child_safety.map(f64::from)),
];

const NUMERIC_AGGREGATES: [&str; 4] = ["avg", "median", "min", "max"];

const BINARY: &[(&str, FeatureCategory, BinaryFn)] = &[
    ("cert_expired", App, |s| s.features.app.as_ref()?.cert_expired),
    ("cert_self_signed", App, |s| s.features.app.as_ref()?.cert_self_signed),
    ("has_email_field", Dpi, |s| s.features.dpi.as_ref().map(|d| d.has_email_field)),
    ("has_username_field", Dpi, |s| s.features.dpi.as_ref().map(|d| d.has_username_field)),
    ("has_password_field", Dpi, |s| s.features.dpi.as_ref().map(|d| d.has_password_field)),
    ("sec_scam", Dom, |s| s.domain.as_ref().map(|d| d.sec_flags.scam)),
    ("sec_spam", Dom, |s| s.domain.as_ref().map(|d| d.sec_flags.spam)),
    ("sec_malware_or_viruses", Dom, |s| s.domain.as_ref().map(|d| d.sec_flags.malware_or_viruses)),
    ("sec_privacy_risks", Dom, |s| s.domain.as_ref().map(|d| d.sec_flags.privacy_risks)),
    ("sec_phishing", Dom, |s| s.domain.as_ref().map(|d| d.sec_flags.phishing)),
];

pub const CONTENT_CLASSES: [&str; 11] =
    ["html", "json", "xml", "javascript", "css", "image", "video", "audio", "text", "binary", "other"];

pub const OS_CLASSES: [&str; 7] =
    ["android_2_or_older", "android_3", "android_4", "android_5", "android_6", "android_7", "android_8_or_newer"];

/// Buckets a lower-cased media type into [`CONTENT_CLASSES`].
pub fn content_class(media: &str) -> &'static str {
    match media {
        "text/html" | "application/xhtml+xml" => "html",
        "application/json" => "json",
        "application/xml" | "text/xml" => "xml",
        "application/javascript" | "text/javascript" | "application/x-javascript" => "javascript",
        "text/css" => "css",
        "application/octet-stream"
        | "application/zip"
        | "application/pdf"
        | "application/vnd.android.package-archive" => "binary",
        m if m.ends_with("+json") => "json",
        m if m.ends_with("+xml") => "xml",
        m if m.starts_with("image/") => "image",
        m if m.starts_with("video/") => "video",
        m if m.starts_with("audio/") => "audio",
        m if m.starts_with("text/") => "text",
        _ => "other",
    }
}

/// Buckets an `Android x.y.z` string by major version.
pub fn os_class(os_version: &str) -> Option<&'static str> {
    let major: u32 = os_version.strip_prefix("Android ")?.split('.').next()?.parse().ok()?;
    Some(match major {
        0..=2 => OS_CLASSES[0],
        3..=7 => OS_CLASSES[major as usize - 2],
        _ => OS_CLASSES[6],
    })
}

fn category_class(category: &str) -> String {
    category.to_ascii_lowercase()
}

struct NominalAttr {
    name: &'static str,
    category: FeatureCategory,
    classes: Vec<String>,
    value: NominalFn,
}

fn nominal_attrs(taxonomy: &Taxonomy) -> Vec<NominalAttr> {
    let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut categories: Vec<String> = taxonomy.categories().iter().map(|c| category_class(c)).collect();
    categories.push(category_class(UNKNOWN_CATEGORY));
    vec![
        NominalAttr {
            name: "protocol",
            category: App,
            classes: AppProtocol::ALL.iter().map(|p| p.as_str().to_string()).collect(),
            value: |s| Some(s.features.protocol().as_str().to_string()),
        },
        NominalAttr {
            name: "tls_version",
            category: App,
            classes: TlsVersion::ALL.iter().map(|v| v.as_str().to_string()).collect(),
            value: |s| s.features.app.as_ref()?.tls_version.map(|v| v.as_str().to_string()),
        },
        NominalAttr {
            name: "content_type",
            category: App,
            classes: owned(&CONTENT_CLASSES),
            value: |s| s.features.app.as_ref()?.content_type.as_deref().map(|m| content_class(m).to_string()),
        },
        NominalAttr {
            name: "os",
            category: App,
            classes: owned(&OS_CLASSES),
            value: |s| s.features.app.as_ref()?.os_version.as_deref().and_then(os_class).map(ToString::to_string),
        },
        NominalAttr {
            name: "category",
            category: Dom,
            classes: categories,
            value: |s| s.domain.as_ref().map(|d| category_class(&d.general_category)),
        },
    ]
}

pub const PORT_RATIO_NAMES: [&str; 6] = ["frac_80", "frac_443", "frac_5228", "r_80_443", "r_80_5228", "r_443_5228"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub category: FeatureCategory,
}

/// Canonical ordered feature list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub schema_version: u32,
    pub features: Vec<FeatureDef>,
    /// Canonical categories the nominal block was built from.
    pub taxonomy_categories: Vec<String>,
}

impl FeatureSchema {
    pub fn new(taxonomy: &Taxonomy) -> FeatureSchema {
        let mut features = Vec::new();
        let mut push = |name: String, category| features.push(FeatureDef { name, category });
        for (base, category, _) in NUMERIC {
            for agg in NUMERIC_AGGREGATES {
                push(format!("{base}_{agg}"), *category);
            }
        }
        for (base, category, _) in BINARY {
            push(format!("{base}_rate"), *category);
        }
        for attr in nominal_attrs(taxonomy) {
            for class in &attr.classes {
                push(format!("{}_{}", attr.name, class), attr.category);
            }
        }
        for name in PORT_RATIO_NAMES {
            push(name.to_string(), Stat);
        }
        FeatureSchema { schema_version: SCHEMA_VERSION, features, taxonomy_categories: taxonomy.categories().to_vec() }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn category_of(&self, name: &str) -> Option<FeatureCategory> {
        self.features.iter().find(|f| f.name == name).map(|f| f.category)
    }

    /// Index ranges of the incidence features of each nominal attribute.
    pub fn incidence_groups(&self, taxonomy: &Taxonomy) -> Vec<(String, core::ops::Range<usize>)> {
        let mut start = NUMERIC.len() * NUMERIC_AGGREGATES.len() + BINARY.len();
        nominal_attrs(taxonomy)
            .into_iter()
            .map(|attr| {
                let range = start..start + attr.classes.len();
                start = range.end;
                (attr.name.to_string(), range)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("subject has no sessions")]
    EmptyInput,
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("subject `{0}` appears more than once")]
    DuplicateSubject(String),
    #[error("label {0} has a single class in this dataset")]
    DegenerateLabel(String),
    #[error("feature row for `{0}` does not match the schema")]
    SchemaMismatch(String),
    #[error("non-finite feature value for `{subject}` in `{feature}`")]
    NonFinite { subject: String, feature: String },
    #[error("class index out of range for `{0}`")]
    ClassOutOfRange(String),
}

/// One subject's aggregated, not yet imputed, feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// In schema order; `None` where the attribute was undefined in every
    /// session.
    pub features: Vec<Option<f64>>,
    pub labels: LabelSet,
    pub session_count: usize,
}

/// Byte-volume shares and pairwise ratios over TCP ports 80, 443 and 5228.
/// Pairwise ratios divide by `max(bytes, 1)`.
pub fn port_ratio_features<'a, I>(sessions: I) -> [f64; 6]
where
    I: IntoIterator<Item = &'a SessionFeatures>,
{
    let mut total = 0u64;
    let mut by_port = [0u64; 3];
    for s in sessions {
        total += s.bytes_total;
        if s.transport == Transport::Tcp {
            if let Some(i) = [80, 443, 5228].iter().position(|p| *p == s.server_port) {
                by_port[i] += s.bytes_total;
            }
        }
    }
    let frac = |b: u64| if total == 0 { 0.0 } else { b as f64 / total as f64 };
    let ratio = |a: u64, b: u64| a as f64 / b.max(1) as f64;
    let [b80, b443, b5228] = by_port;
    [frac(b80), frac(b443), frac(b5228), ratio(b80, b443), ratio(b80, b5228), ratio(b443, b5228)]
}

/// Aggregates one subject's sessions into a feature vector.
pub fn aggregate_subject(
    sessions: &[EnrichedSession],
    subject_id: &str,
    labels: LabelSet,
    taxonomy: &Taxonomy,
) -> Result<SubjectRecord, DatasetError> {
    if sessions.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut features = Vec::new();
    for (_, _, value) in NUMERIC {
        let mut defined: Vec<f64> = sessions.iter().filter_map(value).collect();
        if defined.is_empty() {
            features.extend([None; 4]);
            continue;
        }
        defined.sort_by(f64::total_cmp);
        features.extend([
            Some(stats::mean(&defined)),
            Some(stats::median_sorted(&defined)),
            Some(defined[0]),
            Some(defined[defined.len() - 1]),
        ]);
    }
    for (_, _, value) in BINARY {
        let defined: Vec<bool> = sessions.iter().filter_map(value).collect();
        features.push(
            (!defined.is_empty()).then(|| defined.iter().filter(|b| **b).count() as f64 / defined.len() as f64),
        );
    }
    for attr in nominal_attrs(taxonomy) {
        let mut counts = vec![0usize; attr.classes.len()];
        let mut defined = 0usize;
        for s in sessions {
            let Some(class) = (attr.value)(s) else { continue };
            if let Some(i) = attr.classes.iter().position(|c| *c == class) {
                counts[i] += 1;
                defined += 1;
            }
        }
        features.extend(counts.iter().map(|&c| Some(if defined == 0 { 0.0 } else { c as f64 / defined as f64 })));
    }
    features.extend(port_ratio_features(sessions.iter().map(|s| &s.features)).map(Some));
    Ok(SubjectRecord { subject_id: subject_id.to_string(), features, labels, session_count: sessions.len() })
}

/// Imputed feature matrix for all subjects, independent of the target label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<LabelSet>,
}

impl FeatureTable {
    /// Sorts by subject, fills undefined values with the column median over
    /// subjects where defined (0 if none are).
    pub fn assemble(mut records: Vec<SubjectRecord>, schema: &FeatureSchema) -> Result<FeatureTable, DatasetError> {
        records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        if let Some(w) = records.windows(2).find(|w| w[0].subject_id == w[1].subject_id) {
            return Err(DatasetError::DuplicateSubject(w[0].subject_id.clone()));
        }
        if let Some(r) = records.iter().find(|r| r.features.len() != schema.len()) {
            return Err(DatasetError::SchemaMismatch(r.subject_id.clone()));
        }
        let medians: Vec<f64> = (0..schema.len())
            .map(|j| {
                let defined: Vec<f64> = records.iter().filter_map(|r| r.features[j]).collect();
                if defined.is_empty() {
                    0.0
                } else {
                    stats::median(&defined)
                }
            })
            .collect();
        let rows = records
            .iter()
            .map(|r| r.features.iter().zip(&medians).map(|(v, m)| v.unwrap_or(*m)).collect::<Vec<f64>>())
            .collect::<Vec<_>>();
        for (r, row) in records.iter().zip(&rows) {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite {
                    subject: r.subject_id.clone(),
                    feature: schema.features[j].name.clone(),
                });
            }
        }
        Ok(FeatureTable {
            feature_names: schema.names().map(ToString::to_string).collect(),
            subject_ids: records.iter().map(|r| r.subject_id.clone()).collect(),
            rows,
            labels: records.iter().map(|r| r.labels).collect(),
        })
    }

    /// Learning dataset targeting `label`. Classes absent from the table are
    /// dropped from the class list.
    pub fn target(&self, label: LabelName) -> Result<Dataset, DatasetError> {
        if self.rows.len() < 2 {
            return Err(DatasetError::TooFewSubjects(self.rows.len()));
        }
        let present: BTreeSet<usize> = self.labels.iter().map(|l| l.index(label)).collect();
        if present.len() < 2 {
            return Err(DatasetError::DegenerateLabel(label.column().to_string()));
        }
        let kept: Vec<usize> = present.into_iter().collect();
        let class_list = kept.iter().map(|&i| label.classes()[i].to_string()).collect();
        let y = self.labels.iter().map(|l| kept.iter().position(|&k| k == l.index(label)).expect("present")).collect();
        Dataset::new(
            label.column(),
            self.subject_ids.clone(),
            self.feature_names.clone(),
            self.rows.clone(),
            y,
            class_list,
        )
    }
}

/// Aggregated records to a dataset for one target label.
pub fn impute_and_assemble(
    records: Vec<SubjectRecord>,
    schema: &FeatureSchema,
    label: LabelName,
) -> Result<Dataset, DatasetError> {
    if records.len() < 2 {
        return Err(DatasetError::TooFewSubjects(records.len()));
    }
    FeatureTable::assemble(records, schema)?.target(label)
}

/// Rectangular, finite feature matrix with one class index per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub label_name: String,
    pub subject_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub class_list: Vec<String>,
}

impl Dataset {
    pub fn new(
        label_name: &str,
        subject_ids: Vec<String>,
        feature_names: Vec<String>,
        x: Vec<Vec<f64>>,
        y: Vec<usize>,
        class_list: Vec<String>,
    ) -> Result<Dataset, DatasetError> {
        if x.len() != y.len() || x.len() != subject_ids.len() {
            return Err(DatasetError::SchemaMismatch(label_name.to_string()));
        }
        for (id, row) in subject_ids.iter().zip(&x) {
            if row.len() != feature_names.len() {
                return Err(DatasetError::SchemaMismatch(id.clone()));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { subject: id.clone(), feature: feature_names[j].clone() });
            }
        }
        if let Some(i) = y.iter().position(|&c| c >= class_list.len()) {
            return Err(DatasetError::ClassOutOfRange(subject_ids[i].clone()));
        }
        Ok(Dataset { label_name: label_name.to_string(), subject_ids, feature_names, x, y, class_list })
    }

    /// Anonymous dataset, for tests and synthetic experiments.
    pub fn from_matrix(x: Vec<Vec<f64>>, y: Vec<usize>, n_classes: usize) -> Result<Dataset, DatasetError> {
        let d = x.first().map_or(0, Vec::len);
        Dataset::new(
            "label",
            (0..x.len()).map(|i| format!("s{i:04}")).collect(),
            (0..d).map(|j| format!("f{j}")).collect(),
            x,
            y,
            (0..n_classes).map(|c| format!("c{c}")).collect(),
        )
    }

    pub fn n_samples(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_list.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.x.iter().map(move |row| row[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AppFeatures, StatFeatures};

    fn session(bytes: u64, port: u16, category: Option<&str>) -> EnrichedSession {
        let stat = StatFeatures { bytes_total: bytes, bytes_tx: bytes, ..StatFeatures::default() };
        EnrichedSession {
            features: SessionFeatures {
                session_id: "x".into(),
                subject_id: "s".into(),
                transport: Transport::Tcp,
                server_port: port,
                start_time: 0,
                stat,
                app: None,
                dpi: None,
                domain_name: None,
                bytes_total: bytes,
            },
            domain: category.map(|c| DomainInfo { general_category: c.into(), ..DomainInfo::unknown() }),
        }
    }

    fn labels() -> LabelSet {
        LabelSet::from_indices([0; 10]).unwrap()
    }

    fn feature(schema: &FeatureSchema, record: &SubjectRecord, name: &str) -> Option<f64> {
        record.features[schema.names().position(|n| n == name).unwrap()]
    }

    #[test]
    fn schema_is_unique_and_sized() {
        let schema = FeatureSchema::new(&Taxonomy::builtin());
        let names: BTreeSet<&str> = schema.names().collect();
        assert_eq!(names.len(), schema.len());
        assert_eq!(schema.len(), 23 * 4 + 10 + (3 + 5 + 11 + 7 + 33) + 6);
        assert_eq!(schema.category_of("category_news"), Some(FeatureCategory::Domain));
        assert_eq!(schema.category_of("frac_443"), Some(FeatureCategory::Statistical));
    }

    #[test]
    fn byte_aggregates() {
        let t = Taxonomy::builtin();
        let schema = FeatureSchema::new(&t);
        let sessions = [session(100, 80, None), session(300, 80, None), session(200, 80, None)];
        let r = aggregate_subject(&sessions, "s", labels(), &t).unwrap();
        assert_eq!(feature(&schema, &r, "bytes_total_avg"), Some(200.0));
        assert_eq!(feature(&schema, &r, "bytes_total_median"), Some(200.0));
        assert_eq!(feature(&schema, &r, "bytes_total_min"), Some(100.0));
        assert_eq!(feature(&schema, &r, "bytes_total_max"), Some(300.0));
        assert_eq!(feature(&schema, &r, "cookie_count_avg"), None);
        assert_eq!(feature(&schema, &r, "category_news"), Some(0.0));
        assert_eq!(feature(&schema, &r, "protocol_other"), Some(1.0));
    }

    #[test]
    fn single_session_stats_coincide() {
        let t = Taxonomy::builtin();
        let schema = FeatureSchema::new(&t);
        let r = aggregate_subject(&[session(42, 443, Some("NEWS"))], "s", labels(), &t).unwrap();
        for base in ["bytes_total", "tx_rx_ratio", "rx_pkt_var"] {
            let vals: Vec<_> = NUMERIC_AGGREGATES.iter().map(|a| feature(&schema, &r, &format!("{base}_{a}"))).collect();
            assert!(vals.windows(2).all(|w| w[0] == w[1]), "{base}");
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(aggregate_subject(&[], "s", labels(), &Taxonomy::builtin()), Err(DatasetError::EmptyInput));
    }

    #[test]
    fn incidence_uses_defined_sessions_only() {
        let t = Taxonomy::builtin();
        let schema = FeatureSchema::new(&t);
        let sessions = [session(1, 443, Some("NEWS")), session(1, 443, Some("SEARCH")), session(1, 53, None)];
        let r = aggregate_subject(&sessions, "s", labels(), &t).unwrap();
        assert_eq!(feature(&schema, &r, "category_news"), Some(0.5));
        assert_eq!(feature(&schema, &r, "category_search"), Some(0.5));
        assert_eq!(feature(&schema, &r, "sec_spam_rate"), Some(0.0));
    }

    #[test]
    fn port_ratio_examples() {
        let s = [session(600, 80, None), session(300, 443, None), session(100, 5228, None)];
        let r = port_ratio_features(s.iter().map(|e| &e.features));
        assert_eq!(&r[..4], &[0.6, 0.3, 0.1, 2.0]);

        let s = [session(600, 80, None), session(400, 443, None)];
        let r = port_ratio_features(s.iter().map(|e| &e.features));
        assert_eq!((r[2], r[4]), (0.0, 600.0));

        let s = [session(500, 9999, None)];
        assert_eq!(port_ratio_features(s.iter().map(|e| &e.features)), [0.0; 6]);
    }

    #[test]
    fn os_and_content_buckets() {
        assert_eq!(os_class("Android 5.0.1"), Some("android_5"));
        assert_eq!(os_class("Android 2.3"), Some("android_2_or_older"));
        assert_eq!(os_class("Android 9"), Some("android_8_or_newer"));
        assert_eq!(os_class("iOS 9"), None);
        assert_eq!(content_class("application/ld+json"), "json");
        assert_eq!(content_class("image/webp"), "image");
    }

    #[test]
    fn app_attributes_exclusive() {
        let t = Taxonomy::builtin();
        let schema = FeatureSchema::new(&t);
        let mut s = session(10, 443, None);
        s.features.app = Some(AppFeatures {
            protocol: AppProtocol::Https,
            tls_version: Some(TlsVersion::Tls1_2),
            cert_expired: Some(true),
            cert_self_signed: None,
            cookie_count: None,
            content_type: None,
            os_version: None,
        });
        let r = aggregate_subject(&[s], "s", labels(), &t).unwrap();
        assert_eq!(feature(&schema, &r, "tls_version_tls1_2"), Some(1.0));
        assert_eq!(feature(&schema, &r, "cert_expired_rate"), Some(1.0));
        assert_eq!(feature(&schema, &r, "cert_self_signed_rate"), None);
        assert_eq!(feature(&schema, &r, "content_type_html"), Some(0.0));
    }

    fn record(id: &str, values: Vec<Option<f64>>, gender: usize) -> SubjectRecord {
        SubjectRecord { subject_id: id.into(), features: values, labels: labels().with(LabelName::Gender, gender), session_count: 1 }
    }

    fn tiny_schema() -> FeatureSchema {
        FeatureSchema {
            schema_version: SCHEMA_VERSION,
            features: vec![
                FeatureDef { name: "a".into(), category: Stat },
                FeatureDef { name: "b".into(), category: Stat },
            ],
            taxonomy_categories: Vec::new(),
        }
    }

    #[test]
    fn median_imputation() {
        let records = vec![
            record("s3", vec![Some(3.0), None], 1),
            record("s1", vec![Some(1.0), None], 0),
            record("s2", vec![None, None], 1),
        ];
        let ds = impute_and_assemble(records, &tiny_schema(), LabelName::Gender).unwrap();
        assert_eq!(ds.subject_ids, ["s1", "s2", "s3"]);
        assert_eq!(ds.x, vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]);
        assert_eq!(ds.y, vec![0, 1, 1]);
        assert_eq!(ds.class_list, ["Male", "Female"]);
    }

    #[test]
    fn degenerate_and_duplicate() {
        let same = vec![record("a", vec![Some(1.0), None], 0), record("b", vec![Some(1.0), None], 0)];
        assert_eq!(
            impute_and_assemble(same, &tiny_schema(), LabelName::Gender),
            Err(DatasetError::DegenerateLabel("gender".into()))
        );
        let dup = vec![record("a", vec![Some(1.0), None], 0), record("a", vec![Some(1.0), None], 1)];
        assert_eq!(
            impute_and_assemble(dup, &tiny_schema(), LabelName::Gender),
            Err(DatasetError::DuplicateSubject("a".into()))
        );
        assert_eq!(
            impute_and_assemble(vec![record("a", vec![None, None], 0)], &tiny_schema(), LabelName::Gender),
            Err(DatasetError::TooFewSubjects(1))
        );
    }

    #[test]
    fn absent_classes_dropped() {
        let mut a = record("a", vec![Some(1.0), None], 0);
        let mut b = record("b", vec![Some(2.0), None], 0);
        a.labels = a.labels.with(LabelName::AgeGroup, 0);
        b.labels = b.labels.with(LabelName::AgeGroup, 2);
        let table = FeatureTable::assemble(vec![b, a], &tiny_schema()).unwrap();
        let ds = table.target(LabelName::AgeGroup).unwrap();
        assert_eq!(ds.class_list, ["18-24", "31+"]);
        assert_eq!(ds.y, [0, 1]);
        assert!(table.target(LabelName::Gender).is_err());
    }
}
