use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit, fit_matrix, Hyperparameters, ModelError, ModelKind, PredictorSpec, Result, L2_LEAF,
    LEARNING_RATE, MAX_DEPTH, MAX_FEATURES_FRACTION, MIN_SAMPLES_LEAF, N_TREES,
};
use crate::data::{kfold_indices, DataError, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hyper: Hyperparameters,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub kind: ModelKind,
    pub best: Hyperparameters,
    pub best_index: usize,
    pub table: Vec<GridCell>,
}

/// Grid searched when a configuration does not supply one.
pub fn default_grid(kind: ModelKind) -> Vec<Hyperparameters> {
    let h = Hyperparameters::new;
    match kind {
        ModelKind::DummyMean | ModelKind::DummyMedian | ModelKind::Linear => vec![h()],
        ModelKind::Tree => [3.0, 5.0, 8.0]
            .into_iter()
            .map(|d| h().with(MAX_DEPTH, d).with(MIN_SAMPLES_LEAF, 5.0))
            .collect(),
        ModelKind::Forest => {
            let mut grid = Vec::new();
            for fraction in [1.0 / 3.0, 0.6, 1.0] {
                for depth in [8.0, 12.0] {
                    grid.push(
                        h().with(MAX_DEPTH, depth)
                            .with(MIN_SAMPLES_LEAF, 5.0)
                            .with(MAX_FEATURES_FRACTION, fraction)
                            .with(N_TREES, 100.0),
                    );
                }
            }
            grid
        }
        ModelKind::Gbt => {
            let mut grid = Vec::new();
            for depth in [3.0, 5.0] {
                for lr in [0.05, 0.1] {
                    grid.push(
                        h().with(MAX_DEPTH, depth)
                            .with(LEARNING_RATE, lr)
                            .with(N_TREES, 100.0)
                            .with(L2_LEAF, 1.0),
                    );
                }
            }
            grid
        }
    }
}

/// Mean out-of-fold MSE for every grid cell over `kfold(train, k, seed)`.
/// The best cell is the first minimum in grid order.
pub fn grid_search_cv(
    train: &Dataset,
    kind: ModelKind,
    grid: &[Hyperparameters],
    k: usize,
    seed: u64,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    for h in grid {
        h.validate(kind)?;
    }
    let (x, y) = train.to_matrix().map_err(|e| match e {
        DataError::NonNumericFeature(n) => ModelError::NonNumericFeature(n),
        other => ModelError::Data(other),
    })?;
    let folds = kfold_indices(train.len(), k, seed)?;
    let fold_data: Vec<(Vec<Vec<f64>>, Vec<f64>, &[usize])> = (0..k)
        .map(|f| {
            let idx = folds.train_indices(f);
            (
                idx.iter().map(|&i| x[i].clone()).collect(),
                idx.iter().map(|&i| y[i]).collect(),
                folds.folds[f].as_slice(),
            )
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (tx, ty, held) = &fold_data[f];
            let spec = PredictorSpec::with_hyper(kind, grid[c].clone());
            let params = fit_matrix(tx, ty, &spec, seed);
            held.iter()
                .map(|&i| {
                    let e = y[i] - params.predict(&x[i]);
                    e * e
                })
                .sum::<f64>()
                / held.len() as f64
        })
        .collect();

    let table: Vec<GridCell> = grid
        .iter()
        .enumerate()
        .map(|(c, h)| {
            let fold_mse = scores[c * k..(c + 1) * k].to_vec();
            let mean_mse = fold_mse.iter().sum::<f64>() / k as f64;
            GridCell {
                hyper: h.clone(),
                fold_mse,
                mean_mse,
            }
        })
        .collect();
    let best_index = table
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if c.mean_mse < table[best].mean_mse { i } else { best });
    Ok(GridSearch {
        kind,
        best: table[best_index].hyper.clone(),
        best_index,
        table,
    })
}

/// Fits a default boosting model and keeps the features whose share of total
/// split gain exceeds `threshold`, in descending gain order.
pub fn select_features_by_gain(train: &Dataset, threshold: f64, seed: u64) -> Result<Vec<String>> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(ModelError::InvalidHyperparameter {
            kind: ModelKind::Gbt,
            name: "threshold".into(),
            reason: "must lie in [0, 1)".into(),
        });
    }
    let model = fit(train, &PredictorSpec::new(ModelKind::Gbt), seed)?;
    let gains = model.split_gains();
    let total: f64 = gains.iter().sum();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    let mut ranked: Vec<(usize, f64)> = gains
        .iter()
        .map(|g| g / total)
        .enumerate()
        .filter(|&(_, share)| share > threshold)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .map(|(i, _)| model.schema.features[i].name.clone())
        .collect())
}
