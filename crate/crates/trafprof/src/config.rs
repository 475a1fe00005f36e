//! Pipeline configuration, read from TOML. Relative paths resolve against
//! the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trafprof_core::ml::{Algorithm, FeatureRule, ModelConfig, DEFAULT_SEED, GRID_K};
use trafprof_core::session::Timeouts;
use trafprof_core::LabelName;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{field}: path {path} does not exist")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitRule {
    Named(String),
    Fixed(usize),
}

impl SplitRule {
    fn resolve(&self) -> Result<FeatureRule, ConfigError> {
        match self {
            SplitRule::Named(n) if n.eq_ignore_ascii_case("sqrt") => Ok(FeatureRule::Sqrt),
            SplitRule::Named(n) if n.eq_ignore_ascii_case("all") => Ok(FeatureRule::All),
            SplitRule::Named(n) => Err(ConfigError::Invalid(format!("features_per_split: unknown rule `{n}`"))),
            SplitRule::Fixed(0) => Err(ConfigError::Invalid("features_per_split must be at least 1".into())),
            SplitRule::Fixed(k) => Ok(FeatureRule::Fixed(*k)),
        }
    }
}

/// Grid overrides. Unset fields keep the defaults (RF and ET, K in
/// 30/50/80/100/120, 100 trees, unlimited depth, split at 2, sqrt rule).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlConfig {
    pub algorithms: Option<Vec<String>>,
    pub k_values: Option<Vec<usize>>,
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: Option<usize>,
    pub features_per_split: Option<SplitRule>,
    /// Subset of labels to evaluate; all ten when unset.
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tcp_idle_secs: Option<u64>,
    pub udp_idle_secs: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Capture files, or directories scanned for `*.pcap`.
    pub captures: Vec<PathBuf>,
    pub subject_map: PathBuf,
    pub labels: PathBuf,
    pub fixture_store: PathBuf,
    /// Built-in taxonomy when unset.
    pub taxonomy: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Enrichment cache; `<output_dir>/enrich_cache.jsonl` when unset.
    pub cache: Option<PathBuf>,
    pub seed: u64,
    pub strict: bool,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub keep_intermediates: bool,
    pub ml: MlConfig,
    pub sessionizer: SessionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            captures: Vec::new(),
            subject_map: PathBuf::new(),
            labels: PathBuf::new(),
            fixture_store: PathBuf::new(),
            taxonomy: None,
            output_dir: PathBuf::from("out"),
            cache: None,
            seed: DEFAULT_SEED,
            strict: false,
            threads: 0,
            keep_intermediates: true,
            ml: MlConfig::default(),
            sessionizer: SessionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        self.captures.iter_mut().for_each(fix);
        fix(&mut self.subject_map);
        fix(&mut self.labels);
        fix(&mut self.fixture_store);
        self.taxonomy.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        self.cache.iter_mut().for_each(fix);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks input paths and grid values. The labels file is checked by
    /// the aggregation stage instead.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.captures.is_empty() {
            return Err(ConfigError::Invalid("no capture files given".into()));
        }
        for p in &self.captures {
            if !p.exists() {
                return Err(ConfigError::MissingPath { field: "captures", path: p.clone() });
            }
        }
        let required = [("subject_map", &self.subject_map), ("fixture_store", &self.fixture_store)];
        for (field, p) in required.into_iter().chain(self.taxonomy.iter().map(|t| ("taxonomy", t))) {
            if !p.exists() {
                return Err(ConfigError::MissingPath { field, path: p.clone() });
            }
        }
        self.grid()?;
        self.label_names()?;
        Ok(())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.output_dir.join("enrich_cache.jsonl"))
    }

    pub fn timeouts(&self) -> Timeouts {
        let d = Timeouts::default();
        Timeouts {
            tcp_idle_us: self.sessionizer.tcp_idle_secs.map_or(d.tcp_idle_us, |s| s * 1_000_000),
            udp_idle_us: self.sessionizer.udp_idle_secs.map_or(d.udp_idle_us, |s| s * 1_000_000),
        }
    }

    /// Configurations to evaluate, algorithm-major in the order given.
    pub fn grid(&self) -> Result<Vec<ModelConfig>, ConfigError> {
        let ml = &self.ml;
        let algorithms = match &ml.algorithms {
            None => vec![Algorithm::RandomForest, Algorithm::ExtraTrees],
            Some(names) => names
                .iter()
                .map(|n| match n.to_ascii_uppercase().as_str() {
                    "RF" => Ok(Algorithm::RandomForest),
                    "ET" => Ok(Algorithm::ExtraTrees),
                    _ => Err(ConfigError::Invalid(format!("unknown algorithm `{n}` (RF or ET)"))),
                })
                .collect::<Result<_, _>>()?,
        };
        let ks = ml.k_values.clone().unwrap_or_else(|| GRID_K.to_vec());
        let mut grid = Vec::new();
        for algorithm in algorithms {
            for &k in &ks {
                let mut c = ModelConfig::new(algorithm, k);
                c.seed = self.seed;
                c.n_trees = ml.n_trees.unwrap_or(c.n_trees);
                c.max_depth = ml.max_depth.or(c.max_depth);
                c.min_samples_split = ml.min_samples_split.unwrap_or(c.min_samples_split);
                if let Some(rule) = &ml.features_per_split {
                    c.features_per_split = rule.resolve()?;
                }
                c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                grid.push(c);
            }
        }
        if grid.is_empty() {
            return Err(ConfigError::Invalid("empty model grid".into()));
        }
        Ok(grid)
    }

    pub fn label_names(&self) -> Result<Vec<LabelName>, ConfigError> {
        match &self.ml.labels {
            None => Ok(LabelName::ALL.to_vec()),
            Some(names) => names.iter().map(|n| n.parse().map_err(|e| ConfigError::Invalid(format!("{e}")))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c: PipelineConfig = toml::from_str("seed = 7\n[ml]\nalgorithms = [\"et\"]\nk_values = [5]\nfeatures_per_split = 3\n").unwrap();
        let grid = c.grid().unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!((grid[0].algorithm, grid[0].k_features, grid[0].seed), (Algorithm::ExtraTrees, 5, 7));
        assert_eq!(grid[0].features_per_split, FeatureRule::Fixed(3));
        assert_eq!(PipelineConfig::default().grid().unwrap().len(), 10);
        assert_eq!(PipelineConfig::default().seed, DEFAULT_SEED);
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        assert!(toml::from_str::<PipelineConfig>("sed = 1").is_err());
        let c: PipelineConfig = toml::from_str("[ml]\nfeatures_per_split = \"log2\"").unwrap();
        assert!(matches!(c.grid(), Err(ConfigError::Invalid(_))));
        let c: PipelineConfig = toml::from_str("[ml]\nlabels = [\"height\"]").unwrap();
        assert!(c.label_names().is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        fs::write(&path, "captures = [\"caps\"]\nsubject_map = \"m.tsv\"\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.captures, [dir.path().join("caps")]);
        assert!(matches!(c.validate(), Err(ConfigError::MissingPath { field: "captures", .. })));
        let round: PipelineConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(round, c);
    }
}
