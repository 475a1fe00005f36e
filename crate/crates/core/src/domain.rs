//! Domain enrichment: popularity rank, reputation scores, security flags and
//! a general category drawn from a fixed taxonomy.
//!
//! Lookups go through a [`DomainProvider`] and are keyed on the registrable
//! domain (public suffix plus one label), so `m.example.com` and
//! `example.com` share one record.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const UNKNOWN_CATEGORY: &str = "UNKNOWN";

const BUILTIN_TAXONOMY: &str = include_str!("../data/taxonomy.tsv");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy line {line}: expected `source_label<TAB>canonical_category`")]
    Malformed { line: usize },
    #[error("taxonomy line {line}: label `{label}` already mapped to another category")]
    Conflict { line: usize, label: String },
    #[error("taxonomy declares no categories")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnrichError {
    #[error("domain provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("source category `{0}` is not in the taxonomy")]
    UnknownSourceCategory(String),
    #[error("`{0}` is not a valid hostname")]
    InvalidDomain(String),
}

/// Source-category label to canonical category mapping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    categories: Vec<String>,
    mapping: BTreeMap<String, usize>,
}

impl Taxonomy {
    /// The taxonomy shipped with the crate (32 categories).
    pub fn builtin() -> Taxonomy {
        Taxonomy::parse(BUILTIN_TAXONOMY).expect("builtin taxonomy is valid")
    }

    pub fn parse(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let mut categories: Vec<String> = Vec::new();
        let mut mapping = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default();
            if line.trim().is_empty() {
                continue;
            }
            let Some((label, canonical)) = line.split_once('\t') else {
                return Err(TaxonomyError::Malformed { line: idx + 1 });
            };
            let (label, canonical) = (label.trim().to_ascii_lowercase(), canonical.trim());
            if label.is_empty() || canonical.is_empty() || canonical.contains('\t') || canonical == UNKNOWN_CATEGORY {
                return Err(TaxonomyError::Malformed { line: idx + 1 });
            }
            let cat_idx = match categories.iter().position(|c| c == canonical) {
                Some(i) => i,
                None => {
                    categories.push(canonical.to_string());
                    categories.len() - 1
                }
            };
            if let Some(previous) = mapping.insert(label.clone(), cat_idx) {
                if previous != cat_idx {
                    return Err(TaxonomyError::Conflict { line: idx + 1, label });
                }
            }
        }
        if categories.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        Ok(Taxonomy { categories, mapping })
    }

    /// Canonical categories in declaration order, without UNKNOWN.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn map(&self, source_label: &str) -> Option<&str> {
        let key = source_label.trim().to_ascii_lowercase();
        self.mapping.get(&key).map(|&i| self.categories[i].as_str())
    }

    pub fn contains(&self, category: &str) -> bool {
        category == UNKNOWN_CATEGORY || self.categories.iter().any(|c| c == category)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityFlags {
    pub scam: bool,
    pub spam: bool,
    pub malware_or_viruses: bool,
    pub privacy_risks: bool,
    pub phishing: bool,
}

impl SecurityFlags {
    pub const NAMES: [&'static str; 5] = ["scam", "spam", "malware_or_viruses", "privacy_risks", "phishing"];

    pub fn as_array(&self) -> [bool; 5] {
        [self.scam, self.spam, self.malware_or_viruses, self.privacy_risks, self.phishing]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scores {
    pub good_site: Option<u8>,
    pub trustworthiness: Option<u8>,
    pub child_safety: Option<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategorySources {
    pub source_a: Option<String>,
    pub source_b: Option<String>,
}

/// Raw provider answer for one registrable domain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderRecord {
    pub rank: Option<u32>,
    pub scores: Scores,
    pub flags: SecurityFlags,
    pub categories: CategorySources,
}

/// Lookup capability over popularity, reputation and category sources.
/// Implementations must be side-effect free from the caller's view.
pub trait DomainProvider {
    fn lookup(&self, registrable_domain: &str) -> Result<Option<ProviderRecord>, EnrichError>;
}

impl<P: DomainProvider + ?Sized> DomainProvider for &P {
    fn lookup(&self, registrable_domain: &str) -> Result<Option<ProviderRecord>, EnrichError> {
        (**self).lookup(registrable_domain)
    }
}

/// Provider backed by an in-memory map.
impl DomainProvider for BTreeMap<String, ProviderRecord> {
    fn lookup(&self, registrable_domain: &str) -> Result<Option<ProviderRecord>, EnrichError> {
        Ok(self.get(registrable_domain).cloned())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    /// 1 is the most popular.
    pub popularity_rank: Option<u32>,
    pub score_good_site: Option<u8>,
    pub score_trustworthiness: Option<u8>,
    pub score_child_safety: Option<u8>,
    pub sec_flags: SecurityFlags,
    pub general_category: String,
}

impl DomainInfo {
    pub fn unknown() -> DomainInfo {
        DomainInfo {
            popularity_rank: None,
            score_good_site: None,
            score_trustworthiness: None,
            score_child_safety: None,
            sec_flags: SecurityFlags::default(),
            general_category: UNKNOWN_CATEGORY.to_string(),
        }
    }
}

/// Combines the two category sources. Agreement or a single present source
/// gives its mapping; on conflict the first source wins.
pub fn combine_categories(
    source_a: Option<&str>,
    source_b: Option<&str>,
    taxonomy: &Taxonomy,
    strict: bool,
) -> Result<String, EnrichError> {
    let mut mapped = [None, None];
    for (slot, label) in mapped.iter_mut().zip([source_a, source_b]) {
        let Some(label) = label.filter(|l| !l.trim().is_empty()) else { continue };
        match taxonomy.map(label) {
            Some(category) => *slot = Some(category),
            None if strict => return Err(EnrichError::UnknownSourceCategory(label.to_string())),
            None => {}
        }
    }
    Ok(mapped[0].or(mapped[1]).unwrap_or(UNKNOWN_CATEGORY).to_string())
}

/// Normalizes a hostname (lower case, no trailing dot, no port) and reduces
/// it to its registrable domain. `None` for IP literals and malformed names.
pub fn registrable_domain(host: &str) -> Option<String> {
    let host = host.trim().trim_end_matches('.').to_ascii_lowercase();
    if !is_hostname(&host) {
        return None;
    }
    let reduced = psl::domain_str(&host).unwrap_or(&host);
    Some(reduced.to_string())
}

fn is_hostname(host: &str) -> bool {
    if host.is_empty() || host.len() > 253 || host.parse::<core::net::IpAddr>().is_ok() {
        return false;
    }
    host.split('.').all(|label| {
        !label.is_empty()
            && label.len() <= 63
            && !label.starts_with('-')
            && !label.ends_with('-')
            && label.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
    })
}

/// Builds a [`DomainInfo`] from a provider answer. Out-of-range values are
/// dropped.
pub fn domain_info(record: Option<&ProviderRecord>, taxonomy: &Taxonomy, strict: bool) -> Result<DomainInfo, EnrichError> {
    let Some(record) = record else { return Ok(DomainInfo::unknown()) };
    let score = |s: Option<u8>| s.filter(|v| *v <= 100);
    Ok(DomainInfo {
        popularity_rank: record.rank.filter(|r| *r >= 1),
        score_good_site: score(record.scores.good_site),
        score_trustworthiness: score(record.scores.trustworthiness),
        score_child_safety: score(record.scores.child_safety),
        sec_flags: record.flags,
        general_category: combine_categories(
            record.categories.source_a.as_deref(),
            record.categories.source_b.as_deref(),
            taxonomy,
            strict,
        )?,
    })
}

/// Degradations absorbed in lenient mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichDiagnostics {
    pub provider_failures: u64,
    pub unmapped_categories: u64,
    pub invalid_domains: u64,
}

/// Uncached lookup of one host. In lenient mode every failure degrades to
/// [`DomainInfo::unknown`] (or drops an unmapped category) and is counted.
/// The second element tells whether the result may be cached.
pub fn lookup_domain<P: DomainProvider + ?Sized>(
    host: &str,
    provider: &P,
    taxonomy: &Taxonomy,
    strict: bool,
    diagnostics: &mut EnrichDiagnostics,
) -> Result<(DomainInfo, bool), EnrichError> {
    let Some(key) = registrable_domain(host) else {
        if strict {
            return Err(EnrichError::InvalidDomain(host.to_string()));
        }
        diagnostics.invalid_domains += 1;
        return Ok((DomainInfo::unknown(), true));
    };
    let record = match provider.lookup(&key) {
        Ok(record) => record,
        Err(err) if strict => return Err(err),
        Err(_) => {
            diagnostics.provider_failures += 1;
            return Ok((DomainInfo::unknown(), false));
        }
    };
    match domain_info(record.as_ref(), taxonomy, true) {
        Ok(info) => Ok((info, true)),
        Err(err) if strict => Err(err),
        Err(_) => {
            diagnostics.unmapped_categories += 1;
            Ok((domain_info(record.as_ref(), taxonomy, false)?, true))
        }
    }
}

/// Single-threaded enricher with a per-registrable-domain cache.
pub struct Enricher<P> {
    provider: P,
    taxonomy: Taxonomy,
    strict: bool,
    cache: BTreeMap<String, DomainInfo>,
    diagnostics: EnrichDiagnostics,
}

impl<P: DomainProvider> Enricher<P> {
    pub fn new(provider: P, taxonomy: Taxonomy, strict: bool) -> Self {
        Enricher { provider, taxonomy, strict, cache: BTreeMap::new(), diagnostics: EnrichDiagnostics::default() }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn diagnostics(&self) -> EnrichDiagnostics {
        self.diagnostics
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }

    pub fn enrich(&mut self, host: &str) -> Result<DomainInfo, EnrichError> {
        let key = registrable_domain(host).unwrap_or_else(|| host.to_string());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let (info, cacheable) = lookup_domain(host, &self.provider, &self.taxonomy, self.strict, &mut self.diagnostics)?;
        if cacheable {
            self.cache.insert(key, info.clone());
        }
        Ok(info)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cell::Cell;

    fn record(rank: u32, trust: u8, a: Option<&str>, b: Option<&str>) -> ProviderRecord {
        ProviderRecord {
            rank: Some(rank),
            scores: Scores { good_site: None, trustworthiness: Some(trust), child_safety: None },
            flags: SecurityFlags::default(),
            categories: CategorySources { source_a: a.map(Into::into), source_b: b.map(Into::into) },
        }
    }

    struct Counting<'a> {
        inner: BTreeMap<String, ProviderRecord>,
        calls: &'a Cell<u32>,
        down: bool,
    }

    impl DomainProvider for Counting<'_> {
        fn lookup(&self, d: &str) -> Result<Option<ProviderRecord>, EnrichError> {
            self.calls.set(self.calls.get() + 1);
            if self.down {
                return Err(EnrichError::ProviderUnavailable("offline".into()));
            }
            self.inner.lookup(d)
        }
    }

    #[test]
    fn builtin_has_32_categories() {
        let t = Taxonomy::builtin();
        assert_eq!(t.categories().len(), 32);
        assert_eq!(t.map("SocialNetworking"), Some("SOCIAL_NETWORK"));
        assert_eq!(t.map("webmail"), t.map("email"));
    }

    #[test]
    fn combine_rules() {
        let t = Taxonomy::builtin();
        assert_eq!(combine_categories(Some("socialnetworking"), None, &t, true).unwrap(), "SOCIAL_NETWORK");
        assert_eq!(combine_categories(Some("news"), Some("news"), &t, true).unwrap(), "NEWS");
        assert_eq!(combine_categories(Some("webmail"), Some("email"), &t, true).unwrap(), "EMAIL");
        assert_eq!(combine_categories(Some("news"), Some("sports"), &t, true).unwrap(), "NEWS");
        assert_eq!(combine_categories(None, Some("sports"), &t, true).unwrap(), "SPORTS");
        assert_eq!(combine_categories(None, None, &t, true).unwrap(), UNKNOWN_CATEGORY);
        assert_eq!(
            combine_categories(Some("zzz"), None, &t, true),
            Err(EnrichError::UnknownSourceCategory("zzz".into()))
        );
        assert_eq!(combine_categories(Some("zzz"), Some("news"), &t, false).unwrap(), "NEWS");
    }

    #[test]
    fn taxonomy_parse_errors() {
        assert_eq!(Taxonomy::parse("a\tX\na\tY\n"), Err(TaxonomyError::Conflict { line: 2, label: "a".into() }));
        assert_eq!(Taxonomy::parse("no tab\n"), Err(TaxonomyError::Malformed { line: 1 }));
        assert_eq!(Taxonomy::parse("# nothing\n"), Err(TaxonomyError::Empty));
    }

    #[test]
    fn registrable_reduction() {
        assert_eq!(registrable_domain("m.example-news.com").as_deref(), Some("example-news.com"));
        assert_eq!(registrable_domain("Example-News.COM.").as_deref(), Some("example-news.com"));
        assert_eq!(registrable_domain("a.b.example.co.uk").as_deref(), Some("example.co.uk"));
        assert_eq!(registrable_domain("10.0.0.1"), None);
        assert_eq!(registrable_domain("bad..name"), None);
    }

    #[test]
    fn enrich_fixture_and_subdomain() {
        let mut fixtures = BTreeMap::new();
        fixtures.insert("example-news.com".to_string(), record(1200, 92, Some("news"), Some("news")));
        let mut e = Enricher::new(fixtures, Taxonomy::builtin(), false);
        let info = e.enrich("example-news.com").unwrap();
        assert_eq!(info.popularity_rank, Some(1200));
        assert_eq!(info.score_trustworthiness, Some(92));
        assert_eq!(info.general_category, "NEWS");
        assert_eq!(e.enrich("m.example-news.com").unwrap(), info);
        assert_eq!(e.enrich("unlisted.org").unwrap(), DomainInfo::unknown());
    }

    #[test]
    fn cache_hits_skip_provider() {
        let calls = Cell::new(0);
        let mut inner = BTreeMap::new();
        inner.insert("a.com".to_string(), record(5, 50, Some("news"), None));
        let mut e = Enricher::new(Counting { inner, calls: &calls, down: false }, Taxonomy::builtin(), false);
        let cold = e.enrich("x.a.com").unwrap();
        let warm = e.enrich("a.com").unwrap();
        assert_eq!(cold, warm);
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn provider_failure_degrades_or_propagates() {
        let calls = Cell::new(0);
        let mut lenient =
            Enricher::new(Counting { inner: BTreeMap::new(), calls: &calls, down: true }, Taxonomy::builtin(), false);
        assert_eq!(lenient.enrich("a.com").unwrap(), DomainInfo::unknown());
        assert_eq!(lenient.diagnostics().provider_failures, 1);
        assert_eq!(lenient.cached(), 0);

        let mut strict =
            Enricher::new(Counting { inner: BTreeMap::new(), calls: &calls, down: true }, Taxonomy::builtin(), true);
        assert!(matches!(strict.enrich("a.com"), Err(EnrichError::ProviderUnavailable(_))));
        assert!(matches!(strict.enrich("1.2.3.4"), Err(EnrichError::InvalidDomain(_))));
    }

    #[test]
    fn out_of_range_values_dropped() {
        let mut r = record(0, 101, None, None);
        r.scores.child_safety = Some(100);
        let info = domain_info(Some(&r), &Taxonomy::builtin(), true).unwrap();
        assert_eq!(info.popularity_rank, None);
        assert_eq!(info.score_trustworthiness, None);
        assert_eq!(info.score_child_safety, Some(100));
    }
}
