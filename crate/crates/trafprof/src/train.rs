//! Parallel grid evaluation, per-label reports and model dumps.
//!
//! Folds run on the current rayon pool. Results are merged in (config,
//! fold) order, so output does not depend on the number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trafprof_core::dataset::{DatasetError, FeatureTable};
use trafprof_core::ml::{
    loocv_fold, metrics, select_best, Algorithm, EvalResult, MlError, ModelConfig, Prediction, SelectionMode,
    TrainedEnsemble,
};
use trafprof_core::summary::{RankedFeature, TOP_FEATURES};
use trafprof_core::{Dataset, FeatureSchema, LabelName};

use crate::formats::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("label {label}: {source}")]
    Ml { label: String, source: MlError },
    #[error("label {label}: {source}")]
    Dataset { label: String, source: DatasetError },
}

fn fold_predictions(dataset: &Dataset, configs: &[ModelConfig]) -> Vec<Result<Prediction, MlError>> {
    let n = dataset.n_samples();
    (0..configs.len() * n).into_par_iter().map(|job| loocv_fold(dataset, &configs[job / n], job % n)).collect()
}

/// Leave-one-out evaluation with folds in parallel.
pub fn loocv_parallel(dataset: &Dataset, config: &ModelConfig) -> Result<EvalResult, MlError> {
    Ok(grid_search_parallel(dataset, std::slice::from_ref(config))?.remove(0).1)
}

/// Evaluates every config by LOOCV, in grid order. The first failing
/// (config, fold) in that order determines the error.
pub fn grid_search_parallel(dataset: &Dataset, grid: &[ModelConfig]) -> Result<Vec<(ModelConfig, EvalResult)>, MlError> {
    let n = dataset.n_samples();
    if n < 3 {
        return Err(MlError::TooFewSamples { needed: 3, got: n });
    }
    grid.iter().try_for_each(ModelConfig::validate)?;
    let mut folds = fold_predictions(dataset, grid).into_iter();
    grid.iter()
        .map(|config| {
            let predictions = folds.by_ref().take(n).collect::<Result<Vec<_>, _>>()?;
            Ok((*config, metrics(predictions, dataset.n_classes())?))
        })
        .collect()
}

/// One evaluated configuration with its published score columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub algorithm: Algorithm,
    pub features: usize,
    pub accuracy: f64,
    pub wauc: f64,
    pub w_precision: f64,
    pub w_recall: f64,
    pub f1: f64,
}

impl GridRow {
    fn new(config: &ModelConfig, result: &EvalResult, d: usize) -> Self {
        GridRow {
            algorithm: config.algorithm,
            features: config.k_features.min(d),
            accuracy: result.accuracy,
            wauc: result.wauc,
            w_precision: result.w_precision,
            w_recall: result.w_recall,
            f1: result.f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    /// Position in `grid`.
    pub grid_index: usize,
    pub config: ModelConfig,
    pub scores: GridRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub true_class: String,
    pub predicted_class: String,
    pub proba: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub schema_version: u32,
    pub label: String,
    pub title: String,
    pub n_subjects: usize,
    pub class_list: Vec<String>,
    pub class_counts: Vec<usize>,
    /// Set when the label could not be evaluated on this dataset.
    pub skipped: Option<String>,
    pub grid: Vec<GridRow>,
    pub best_f1: Option<BestModel>,
    pub best_wauc: Option<BestModel>,
    /// Most important features of the best-WAUC model refit on all subjects.
    pub top_features: Vec<RankedFeature>,
    /// Pooled LOOCV predictions of the best-F1 model.
    pub predictions: Vec<SubjectPrediction>,
}

/// Full model dump of a label's best-WAUC configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub schema_version: u32,
    pub label: String,
    pub selected_features: Vec<String>,
    pub model: TrainedEnsemble,
}

impl LabelReport {
    fn skipped(label: LabelName, table: &FeatureTable, reason: String) -> Self {
        let class_list: Vec<String> = label.classes().iter().map(|c| c.to_string()).collect();
        let class_counts =
            (0..class_list.len()).map(|c| table.labels.iter().filter(|l| l.index(label) == c).count()).collect();
        LabelReport {
            schema_version: SCHEMA_VERSION,
            label: label.column().to_string(),
            title: label.title().to_string(),
            n_subjects: table.subject_ids.len(),
            class_list,
            class_counts,
            skipped: Some(reason),
            grid: Vec::new(),
            best_f1: None,
            best_wauc: None,
            top_features: Vec::new(),
            predictions: Vec::new(),
        }
    }
}

/// Grid-searches one label. Labels with a single class, or whose folds
/// collapse to one class, yield a skipped report instead of an error.
pub fn train_label(
    table: &FeatureTable,
    schema: &FeatureSchema,
    label: LabelName,
    grid: &[ModelConfig],
) -> Result<(LabelReport, Option<ModelDump>), TrainError> {
    let ml_err = |source| TrainError::Ml { label: label.column().to_string(), source };
    let dataset = match table.target(label) {
        Ok(ds) => ds,
        Err(e @ (DatasetError::DegenerateLabel(_) | DatasetError::TooFewSubjects(_))) => {
            return Ok((LabelReport::skipped(label, table, e.to_string()), None));
        }
        Err(source) => return Err(TrainError::Dataset { label: label.column().to_string(), source }),
    };
    let results = match grid_search_parallel(&dataset, grid) {
        Ok(r) => r,
        Err(e @ (MlError::FoldDegenerate(_) | MlError::TooFewSamples { .. })) => {
            return Ok((LabelReport::skipped(label, table, e.to_string()), None));
        }
        Err(e) => return Err(ml_err(e)),
    };
    let d = dataset.n_features();
    let evals: Vec<EvalResult> = results.iter().map(|(_, r)| r.clone()).collect();
    let best = |mode| {
        select_best(&evals, mode).map(|i| BestModel {
            grid_index: i,
            config: results[i].0,
            scores: GridRow::new(&results[i].0, &results[i].1, d),
        })
    };
    let best_f1 = best(SelectionMode::F1).expect("grid is not empty");
    let best_wauc = best(SelectionMode::Wauc).expect("grid is not empty");

    let model = TrainedEnsemble::train(&dataset, &best_wauc.config).map_err(ml_err)?;
    let top_features = model
        .feature_importance()
        .into_iter()
        .take(TOP_FEATURES)
        .map(|r| {
            let name = dataset.feature_names[r.feature].clone();
            let category = schema.category_of(&name).ok_or_else(|| TrainError::Dataset {
                label: label.column().to_string(),
                source: DatasetError::SchemaMismatch(name.clone()),
            })?;
            Ok(RankedFeature { name, category, importance: r.importance })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let predictions = results[best_f1.grid_index]
        .1
        .predictions
        .iter()
        .zip(&dataset.subject_ids)
        .map(|(p, id)| SubjectPrediction {
            subject_id: id.clone(),
            true_class: dataset.class_list[p.true_class].clone(),
            predicted_class: dataset.class_list[p.predicted].clone(),
            proba: p.proba.clone(),
        })
        .collect();
    let class_counts = (0..dataset.n_classes()).map(|c| dataset.y.iter().filter(|&&y| y == c).count()).collect();
    let report = LabelReport {
        schema_version: SCHEMA_VERSION,
        label: label.column().to_string(),
        title: label.title().to_string(),
        n_subjects: dataset.n_samples(),
        class_list: dataset.class_list.clone(),
        class_counts,
        skipped: None,
        grid: results.iter().map(|(c, r)| GridRow::new(c, r, d)).collect(),
        best_f1: Some(best_f1),
        best_wauc: Some(best_wauc),
        top_features,
        predictions,
    };
    let dump = ModelDump {
        schema_version: SCHEMA_VERSION,
        label: label.column().to_string(),
        selected_features: model.selected_feature_indices.iter().map(|&j| dataset.feature_names[j].clone()).collect(),
        model,
    };
    Ok((report, Some(dump)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use trafprof_core::ml::{default_grid, grid_search};

    fn dataset() -> Dataset {
        let x = (0..12).map(|i| vec![(i % 2) as f64 + 0.01 * i as f64, (i * 7 % 5) as f64, 1.0]).collect();
        Dataset::from_matrix(x, (0..12).map(|i| i % 2).collect(), 2).unwrap()
    }

    #[test]
    fn parallel_matches_serial_for_any_pool_size() {
        let ds = dataset();
        let mut base = ModelConfig::new(Algorithm::RandomForest, 2);
        base.n_trees = 7;
        let grid = default_grid(&base);
        let serial = grid_search(&ds, &grid).unwrap();
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            assert_eq!(pool.install(|| grid_search_parallel(&ds, &grid)).unwrap(), serial);
        }
    }

    #[test]
    fn degenerate_fold_error_is_first_in_order() {
        let ds = Dataset::from_matrix(vec![vec![0.0], vec![0.5], vec![1.0]], vec![0, 0, 1], 2).unwrap();
        let config = ModelConfig::new(Algorithm::ExtraTrees, 1);
        assert_eq!(loocv_parallel(&ds, &config), Err(MlError::FoldDegenerate(2)));
    }
}
