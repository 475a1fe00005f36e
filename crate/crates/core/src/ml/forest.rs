use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::rng::{mix, Rng};
use super::tree::{DecisionTree, TrainingData, TreeParams};
use super::{select_k_best, Algorithm, MlError, ModelConfig};
use crate::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub config: ModelConfig,
    pub class_list: Vec<String>,
    /// Input feature indices feeding the trees, ascending. Tree split
    /// indices address this list.
    pub selected_feature_indices: Vec<usize>,
    pub n_input_features: usize,
    pub trees: Vec<DecisionTree>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub feature: usize,
    pub importance: f64,
}

impl TrainedEnsemble {
    /// Selects the K best features on `rows` and fits the ensemble with
    /// `seed` as the root of every tree's substream.
    pub fn train(dataset: &Dataset, config: &ModelConfig) -> Result<TrainedEnsemble, MlError> {
        let rows: Vec<usize> = (0..dataset.n_samples()).collect();
        TrainedEnsemble::train_rows(dataset, &rows, config, config.seed)
    }

    /// Trains on a subset of the dataset's rows.
    pub fn train_rows(dataset: &Dataset, rows: &[usize], config: &ModelConfig, seed: u64) -> Result<TrainedEnsemble, MlError> {
        config.validate()?;
        let y: Vec<usize> = rows.iter().map(|&r| dataset.y[r]).collect();
        let first = *y.first().ok_or(MlError::TooFewSamples { needed: 2, got: 0 })?;
        if y.iter().all(|&c| c == first) {
            return Err(MlError::DegenerateLabel);
        }
        let d = dataset.n_features();
        let all_columns: Vec<Vec<f64>> = (0..d).map(|j| rows.iter().map(|&r| dataset.x[r][j]).collect()).collect();
        let selected = select_k_best(&all_columns, &y, config.k_features.min(d))?;
        let columns: Vec<Vec<f64>> = selected.iter().map(|&j| all_columns[j].clone()).collect();
        let data = TrainingData { columns: &columns, y: &y, n_classes: dataset.n_classes() };
        let params = TreeParams {
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split,
            features_per_split: config.features_per_split.resolve(selected.len()),
            random_thresholds: config.algorithm == Algorithm::ExtraTrees,
        };
        let n = y.len();
        let trees = (0..config.n_trees)
            .map(|j| {
                let mut rng = Rng::new(mix(seed, j as u64));
                let samples = match config.algorithm {
                    Algorithm::RandomForest => (0..n).map(|_| rng.below(n)).collect(),
                    Algorithm::ExtraTrees => (0..n).collect(),
                };
                DecisionTree::fit(&data, samples, params, &mut rng)
            })
            .collect();
        Ok(TrainedEnsemble {
            config: *config,
            class_list: dataset.class_list.clone(),
            selected_feature_indices: selected,
            n_input_features: d,
            trees,
        })
    }

    /// Mean of the trees' leaf distributions over `class_list`.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>, MlError> {
        if row.len() != self.n_input_features {
            return Err(MlError::DimensionMismatch { expected: self.n_input_features, got: row.len() });
        }
        let mut acc = alloc::vec![0.0; self.class_list.len()];
        for tree in &self.trees {
            let p = tree.leaf_proba(|f| row[self.selected_feature_indices[f]]);
            acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Index into `class_list` of the most probable class; ties go to the
    /// earlier class.
    pub fn predict(&self, row: &[f64]) -> Result<usize, MlError> {
        Ok(argmax(&self.predict_proba(row)?))
    }

    /// Importance of every input feature, sorted descending with ties by
    /// index. Tree importances are averaged over trees that split with
    /// positive gain; unselected features score 0.
    pub fn feature_importance(&self) -> Vec<FeatureRank> {
        let k = self.selected_feature_indices.len();
        let mut sum = alloc::vec![0.0; k];
        let mut contributing = 0usize;
        for tree in &self.trees {
            let imp = tree.importance(k);
            if imp.iter().any(|&v| v > 0.0) {
                contributing += 1;
                sum.iter_mut().zip(&imp).for_each(|(s, v)| *s += v);
            }
        }
        let mut ranks: Vec<FeatureRank> =
            (0..self.n_input_features).map(|feature| FeatureRank { feature, importance: 0.0 }).collect();
        if contributing > 0 {
            for (local, &feature) in self.selected_feature_indices.iter().enumerate() {
                ranks[feature].importance = sum[local] / contributing as f64;
            }
        }
        ranks.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.feature.cmp(&b.feature)));
        ranks
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
