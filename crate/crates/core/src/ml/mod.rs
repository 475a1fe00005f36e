//! Feature selection, tree ensembles, leave-one-out evaluation and metrics.

mod anova;
mod cv;
mod forest;
mod metrics;
pub mod rng;
mod tree;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use anova::{anova_f, f_scores, select_k_best, top_k};
pub use cv::{default_grid, grid_search, loocv, loocv_fold, select_best, SelectionMode, GRID_K};
pub use forest::{FeatureRank, TrainedEnsemble};
pub use metrics::{f1_score, metrics, EvalResult, Prediction};
pub use tree::{DecisionTree, Node, TrainingData, TreeParams};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MlError {
    #[error("only one class present")]
    SingleClass,
    #[error("label has a single class in the dataset")]
    DegenerateLabel,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("training labels of fold {0} collapse to one class")]
    FoldDegenerate(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "RF")]
    RandomForest,
    #[serde(rename = "ET")]
    ExtraTrees,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::RandomForest => "RF",
            Algorithm::ExtraTrees => "ET",
        }
    }
}

/// Candidate features drawn per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRule {
    /// floor(sqrt(d)), at least 1.
    Sqrt,
    All,
    Fixed(usize),
}

impl FeatureRule {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            FeatureRule::Sqrt => libm::floor(libm::sqrt(d as f64)) as usize,
            FeatureRule::All => d,
            FeatureRule::Fixed(m) => m.min(d),
        };
        m.max(1)
    }
}

pub const DEFAULT_SEED: u64 = 0x5EED_2016;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub algorithm: Algorithm,
    pub k_features: usize,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: FeatureRule,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(algorithm: Algorithm, k_features: usize) -> ModelConfig {
        ModelConfig {
            algorithm,
            k_features,
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: FeatureRule::Sqrt,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<(), MlError> {
        if self.k_features == 0 {
            return Err(MlError::InvalidConfig("k_features must be at least 1".into()));
        }
        if self.n_trees == 0 {
            return Err(MlError::InvalidConfig("n_trees must be at least 1".into()));
        }
        Ok(())
    }
}

/// Transposes row-major data.
pub fn columns_of(rows: &[Vec<f64>], n_features: usize) -> Vec<Vec<f64>> {
    (0..n_features).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}
