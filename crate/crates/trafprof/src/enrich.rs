//! File-backed domain provider and a thread-safe enrichment cache with
//! JSON-lines persistence.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use trafprof_core::domain::{lookup_domain, registrable_domain, EnrichDiagnostics, EnrichError, ProviderRecord};
use trafprof_core::{DomainInfo, DomainProvider, Taxonomy};

use crate::formats::{read_text, FormatError, SCHEMA_VERSION};

/// Provider over a fixture store: either one JSON map
/// `domain -> record`, or a directory of `<domain>.json` record files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixtureProvider {
    records: BTreeMap<String, ProviderRecord>,
}

impl FixtureProvider {
    pub fn new(records: BTreeMap<String, ProviderRecord>) -> Self {
        let records = records.into_iter().map(|(k, v)| (k.to_ascii_lowercase(), v)).collect();
        FixtureProvider { records }
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        if !path.is_dir() {
            let text = read_text(path)?;
            let map = serde_json::from_str(&text)
                .map_err(|e| FormatError::Json { path: path.into(), line: e.line(), source: e })?;
            return Ok(FixtureProvider::new(map));
        }
        let mut records = BTreeMap::new();
        let entries = fs::read_dir(path).map_err(|e| FormatError::io(path, e))?;
        for entry in entries {
            let file = entry.map_err(|e| FormatError::io(path, e))?.path();
            if file.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(domain) = file.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = read_text(&file)?;
            let record = serde_json::from_str(&text)
                .map_err(|e| FormatError::Json { path: file.clone(), line: e.line(), source: e })?;
            records.insert(domain.to_string(), record);
        }
        Ok(FixtureProvider::new(records))
    }

    pub fn records(&self) -> &BTreeMap<String, ProviderRecord> {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl DomainProvider for FixtureProvider {
    fn lookup(&self, registrable_domain: &str) -> Result<Option<ProviderRecord>, EnrichError> {
        Ok(self.records.get(registrable_domain).cloned())
    }
}

/// One line of the cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheLine {
    pub schema_version: u32,
    pub domain: String,
    pub info: DomainInfo,
}

/// Reads a cache file; later lines win. A missing file is an empty cache.
pub fn load_cache(path: &Path) -> Result<BTreeMap<String, DomainInfo>, FormatError> {
    let mut out = BTreeMap::new();
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(FormatError::io(path, e)),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CacheLine =
            serde_json::from_str(&line).map_err(|e| FormatError::Json { path: path.into(), line: i + 1, source: e })?;
        if entry.schema_version != SCHEMA_VERSION {
            return Err(FormatError::Schema {
                path: path.into(),
                expected: "cache".into(),
                version: SCHEMA_VERSION,
                found: entry.schema_version.to_string(),
            });
        }
        out.insert(entry.domain, entry.info);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct Outcome {
    result: Result<DomainInfo, EnrichError>,
    persist: bool,
}

type Slot = Arc<OnceLock<Outcome>>;

/// Enricher shareable across threads. Concurrent misses on one
/// registrable domain wait on a single provider call.
pub struct SharedEnricher<P> {
    provider: P,
    taxonomy: Taxonomy,
    strict: bool,
    slots: Mutex<HashMap<String, Slot>>,
    diagnostics: Mutex<EnrichDiagnostics>,
    provider_calls: AtomicU64,
}

impl<P: DomainProvider + Sync> SharedEnricher<P> {
    pub fn new(provider: P, taxonomy: Taxonomy, strict: bool) -> Self {
        SharedEnricher {
            provider,
            taxonomy,
            strict,
            slots: Mutex::new(HashMap::new()),
            diagnostics: Mutex::new(EnrichDiagnostics::default()),
            provider_calls: AtomicU64::new(0),
        }
    }

    /// Seeds the cache; warm entries are never re-persisted.
    pub fn with_warm_cache(self, warm: BTreeMap<String, DomainInfo>) -> Self {
        {
            let mut slots = self.slots.lock().expect("cache lock");
            for (domain, info) in warm {
                let cell = OnceLock::new();
                let _ = cell.set(Outcome { result: Ok(info), persist: false });
                slots.insert(domain, Arc::new(cell));
            }
        }
        self
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn diagnostics(&self) -> EnrichDiagnostics {
        *self.diagnostics.lock().expect("diagnostics lock")
    }

    /// Lookups that reached the provider (or failed validation) so far.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn enrich(&self, host: &str) -> Result<DomainInfo, EnrichError> {
        let key = registrable_domain(host).unwrap_or_else(|| host.trim().to_ascii_lowercase());
        let slot = Arc::clone(self.slots.lock().expect("cache lock").entry(key).or_default());
        let outcome = slot.get_or_init(|| {
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let mut diag = EnrichDiagnostics::default();
            let result = lookup_domain(host, &self.provider, &self.taxonomy, self.strict, &mut diag);
            {
                let mut total = self.diagnostics.lock().expect("diagnostics lock");
                total.provider_failures += diag.provider_failures;
                total.unmapped_categories += diag.unmapped_categories;
                total.invalid_domains += diag.invalid_domains;
            }
            match result {
                Ok((info, cacheable)) => Outcome { result: Ok(info), persist: cacheable },
                Err(e) => Outcome { result: Err(e), persist: false },
            }
        });
        outcome.result.clone()
    }

    /// Successful lookups made by this instance, sorted by domain.
    pub fn fresh_entries(&self) -> BTreeMap<String, DomainInfo> {
        let slots = self.slots.lock().expect("cache lock");
        slots
            .iter()
            .filter_map(|(k, slot)| {
                let outcome = slot.get()?;
                match (&outcome.result, outcome.persist) {
                    (Ok(info), true) => Some((k.clone(), info.clone())),
                    _ => None,
                }
            })
            .collect()
    }

    /// Appends [`Self::fresh_entries`] to a cache file.
    pub fn persist(&self, path: &Path) -> Result<usize, FormatError> {
        let entries = self.fresh_entries();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| FormatError::io(path, e))?;
        let mut buf = Vec::new();
        for (domain, info) in &entries {
            let line = CacheLine { schema_version: SCHEMA_VERSION, domain: domain.clone(), info: info.clone() };
            serde_json::to_writer(&mut buf, &line).map_err(|e| FormatError::Json { path: path.into(), line: 0, source: e })?;
            buf.push(b'\n');
        }
        file.write_all(&buf).map_err(|e| FormatError::io(path, e))?;
        Ok(entries.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;
    use std::time::Duration;
    use trafprof_core::domain::CategorySources;

    fn record(a: &str) -> ProviderRecord {
        ProviderRecord {
            rank: Some(10),
            categories: CategorySources { source_a: Some(a.into()), source_b: None },
            ..Default::default()
        }
    }

    struct Slow {
        calls: AtomicU64,
        fail: bool,
    }

    impl DomainProvider for Slow {
        fn lookup(&self, _: &str) -> Result<Option<ProviderRecord>, EnrichError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(20));
            if self.fail {
                Err(EnrichError::ProviderUnavailable("down".into()))
            } else {
                Ok(Some(record("news")))
            }
        }
    }

    #[test]
    fn concurrent_misses_call_provider_once() {
        let enricher = SharedEnricher::new(Slow { calls: AtomicU64::new(0), fail: false }, Taxonomy::builtin(), false);
        thread::scope(|s| {
            for i in 0..8 {
                let e = &enricher;
                s.spawn(move || {
                    let host = if i % 2 == 0 { "www.daily.example.com" } else { "m.daily.example.com" };
                    assert_eq!(e.enrich(host).unwrap().general_category, "NEWS");
                });
            }
        });
        assert_eq!(enricher.provider.calls.load(Ordering::SeqCst), 1);
        assert_eq!(enricher.provider_calls(), 1);
    }

    #[test]
    fn provider_failure_degrades_and_is_not_persisted() {
        let enricher = SharedEnricher::new(Slow { calls: AtomicU64::new(0), fail: true }, Taxonomy::builtin(), false);
        assert_eq!(enricher.enrich("a.example.com").unwrap(), DomainInfo::unknown());
        assert_eq!(enricher.diagnostics().provider_failures, 1);
        assert!(enricher.fresh_entries().is_empty());

        let strict = SharedEnricher::new(Slow { calls: AtomicU64::new(0), fail: true }, Taxonomy::builtin(), true);
        assert!(matches!(strict.enrich("a.example.com"), Err(EnrichError::ProviderUnavailable(_))));
    }

    #[test]
    fn warm_cache_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache.jsonl");
        let mut map = BTreeMap::new();
        map.insert("dailynews.com".to_string(), record("news"));
        map.insert("ShopMart.net".to_string(), record("ecommerce"));
        let provider = FixtureProvider::new(map);
        let hosts = ["www.dailynews.com", "m.shopmart.net", "unlisted.example.org", "10.1.2.3", "bad host"];

        let cold = SharedEnricher::new(provider.clone(), Taxonomy::builtin(), false);
        let cold_out: Vec<_> = hosts.iter().map(|h| cold.enrich(h).unwrap()).collect();
        assert_eq!(cold.persist(&cache).unwrap(), 5);

        let warm = SharedEnricher::new(provider, Taxonomy::builtin(), false).with_warm_cache(load_cache(&cache).unwrap());
        let warm_out: Vec<_> = hosts.iter().map(|h| warm.enrich(h).unwrap()).collect();
        assert_eq!(cold_out, warm_out);
        assert_eq!(warm.provider_calls(), 0);
        assert_eq!(warm.persist(&cache).unwrap(), 0);
        assert_eq!(cold_out[1].general_category, "SHOPPING");
    }

    #[test]
    fn directory_store() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("news.example.com.json"), r#"{"rank": 5, "categories": {"source_b": "news"}}"#).unwrap();
        fs::write(dir.path().join("README.txt"), "ignored").unwrap();
        let p = FixtureProvider::load(dir.path()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.lookup("news.example.com").unwrap().unwrap().rank, Some(5));
    }
}
