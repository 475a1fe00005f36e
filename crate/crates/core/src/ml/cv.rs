use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::forest::{argmax, TrainedEnsemble};
use super::metrics::{metrics, EvalResult, Prediction};
use super::{Algorithm, MlError, ModelConfig};
use crate::dataset::Dataset;

pub const GRID_K: [usize; 5] = [30, 50, 80, 100, 120];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    F1,
    Wauc,
}

/// RF over every K, then ET over every K. This is also the tie order.
pub fn default_grid(base: &ModelConfig) -> Vec<ModelConfig> {
    [Algorithm::RandomForest, Algorithm::ExtraTrees]
        .into_iter()
        .flat_map(|algorithm| GRID_K.map(|k_features| ModelConfig { algorithm, k_features, ..*base }))
        .collect()
}

/// Trains on every row except `held_out` (seed `config.seed ^ held_out`)
/// and predicts it.
pub fn loocv_fold(dataset: &Dataset, config: &ModelConfig, held_out: usize) -> Result<Prediction, MlError> {
    let rows: Vec<usize> = (0..dataset.n_samples()).filter(|&r| r != held_out).collect();
    let model = match TrainedEnsemble::train_rows(dataset, &rows, config, config.seed ^ held_out as u64) {
        Err(MlError::DegenerateLabel) => return Err(MlError::FoldDegenerate(held_out)),
        other => other?,
    };
    let proba = model.predict_proba(&dataset.x[held_out])?;
    Ok(Prediction { true_class: dataset.y[held_out], predicted: argmax(&proba), proba })
}

pub fn loocv(dataset: &Dataset, config: &ModelConfig) -> Result<EvalResult, MlError> {
    let n = dataset.n_samples();
    if n < 3 {
        return Err(MlError::TooFewSamples { needed: 3, got: n });
    }
    let predictions = (0..n).map(|i| loocv_fold(dataset, config, i)).collect::<Result<Vec<_>, _>>()?;
    metrics(predictions, dataset.n_classes())
}

/// Index of the best result; ties keep the earlier entry.
pub fn select_best(results: &[EvalResult], mode: SelectionMode) -> Option<usize> {
    let score = |r: &EvalResult| match mode {
        SelectionMode::F1 => r.f1,
        SelectionMode::Wauc => r.wauc,
    };
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if best.is_none_or(|b| score(r) > score(&results[b])) {
            best = Some(i);
        }
    }
    best
}

/// Evaluates every config and returns them with their results in grid order.
pub fn grid_search(dataset: &Dataset, grid: &[ModelConfig]) -> Result<Vec<(ModelConfig, EvalResult)>, MlError> {
    grid.iter().map(|c| Ok((*c, loocv(dataset, c)?))).collect()
}
