//! The model roster behind one predictor contract: mean and median dummies,
//! least squares, CART, bagged forests, and squared-loss gradient boosting.

mod linear;
pub mod tree;
mod tuning;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Schema};
use crate::rng::SplitMix64;

pub use linear::{fit_least_squares, LinearParams, RIDGE_JITTER};
pub use tree::{Node, Tree};
pub use tuning::{default_grid, grid_search_cv, select_features_by_gain, GridCell, GridSearch};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("feature `{0}` is not numeric; encode categoricals first")]
    NonNumericFeature(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid hyper-parameter `{name}` for {kind}: {reason}")]
    InvalidHyperparameter {
        kind: ModelKind,
        name: String,
        reason: String,
    },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("unknown model kind `{0}`")]
    UnknownKind(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Anything that maps a feature row to a number.
pub trait Predict: Sync {
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl<F> Predict for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn predict_row(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DummyMean,
    DummyMedian,
    Linear,
    Tree,
    Forest,
    Gbt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::DummyMean,
        ModelKind::DummyMedian,
        ModelKind::Linear,
        ModelKind::Tree,
        ModelKind::Forest,
        ModelKind::Gbt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::DummyMean => "dummy_mean",
            ModelKind::DummyMedian => "dummy_median",
            ModelKind::Linear => "linear",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Gbt => "gbt",
        }
    }

    /// Display label used in evaluation tables.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::DummyMean => "Dummy (mean)",
            ModelKind::DummyMedian => "Dummy (median)",
            ModelKind::Linear => "Linear regression",
            ModelKind::Tree => "Decision tree",
            ModelKind::Forest => "Random forest",
            ModelKind::Gbt => "Gradient boosting",
        }
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self, ModelKind::DummyMean | ModelKind::DummyMedian)
    }

    fn allowed_keys(&self) -> &'static [&'static str] {
        match self {
            ModelKind::DummyMean | ModelKind::DummyMedian | ModelKind::Linear => &[],
            ModelKind::Tree => &[MAX_DEPTH, MIN_SAMPLES_LEAF],
            ModelKind::Forest => &[MAX_DEPTH, MIN_SAMPLES_LEAF, N_TREES, MAX_FEATURES_FRACTION],
            ModelKind::Gbt => &[MAX_DEPTH, MIN_SAMPLES_LEAF, N_TREES, LEARNING_RATE, L2_LEAF],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownKind(s.to_string()))
    }
}

pub const MAX_DEPTH: &str = "max_depth";
pub const MIN_SAMPLES_LEAF: &str = "min_samples_leaf";
pub const N_TREES: &str = "n_trees";
pub const MAX_FEATURES_FRACTION: &str = "max_features_fraction";
pub const LEARNING_RATE: &str = "learning_rate";
pub const L2_LEAF: &str = "l2_leaf";

/// Named hyper-parameter overrides; absent keys take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperparameters(pub BTreeMap<String, f64>);

impl Hyperparameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn max_depth(&self) -> usize {
        self.get(MAX_DEPTH).map_or(6, |v| v as usize)
    }

    pub fn min_samples_leaf(&self) -> usize {
        self.get(MIN_SAMPLES_LEAF).map_or(5, |v| v as usize)
    }

    pub fn n_trees(&self) -> usize {
        self.get(N_TREES).map_or(100, |v| v as usize)
    }

    pub fn max_features_fraction(&self) -> f64 {
        self.get(MAX_FEATURES_FRACTION).unwrap_or(1.0 / 3.0)
    }

    pub fn learning_rate(&self) -> f64 {
        self.get(LEARNING_RATE).unwrap_or(0.1)
    }

    pub fn l2_leaf(&self) -> f64 {
        self.get(L2_LEAF).unwrap_or(1.0)
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let bad = |name: &str, reason: &str| ModelError::InvalidHyperparameter {
            kind,
            name: name.to_string(),
            reason: reason.to_string(),
        };
        for (name, &v) in &self.0 {
            if !kind.allowed_keys().contains(&name.as_str()) {
                return Err(bad(name, "not recognized for this model kind"));
            }
            if !v.is_finite() {
                return Err(bad(name, "must be finite"));
            }
            match name.as_str() {
                MAX_DEPTH | MIN_SAMPLES_LEAF => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(bad(name, "must be a positive integer"));
                    }
                }
                N_TREES => {
                    // zero rounds is a valid boosting base case
                    let min = if kind == ModelKind::Gbt { 0.0 } else { 1.0 };
                    if v < min || v.fract() != 0.0 {
                        return Err(bad(name, "must be a positive integer"));
                    }
                }
                MAX_FEATURES_FRACTION | LEARNING_RATE => {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(bad(name, "must lie in (0, 1]"));
                    }
                }
                L2_LEAF => {
                    if v < 0.0 {
                        return Err(bad(name, "must be non-negative"));
                    }
                }
                _ => unreachable!(),
            }
        }
        Ok(())
    }
}

impl fmt::Display for Hyperparameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("defaults");
        }
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyper: Hyperparameters,
}

impl PredictorSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            hyper: Hyperparameters::new(),
        }
    }

    pub fn with_hyper(kind: ModelKind, hyper: Hyperparameters) -> Self {
        Self { kind, hyper }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedParams {
    Constant { value: f64 },
    Linear(LinearParams),
    Tree(Tree),
    Forest { trees: Vec<Tree> },
    Boosted { base: f64, trees: Vec<Tree> },
}

impl FittedParams {
    #[inline]
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedParams::Constant { value } => *value,
            FittedParams::Linear(p) => p.predict(x),
            FittedParams::Tree(t) => t.predict(x),
            FittedParams::Forest { trees } => {
                trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
            }
            FittedParams::Boosted { base, trees } => {
                trees.iter().fold(*base, |acc, t| acc + t.predict(x))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub kind: ModelKind,
    pub hyper: Hyperparameters,
    pub schema: Schema,
    pub params: FittedParams,
    pub train_seed: u64,
}

impl TrainedModel {
    pub fn spec(&self) -> PredictorSpec {
        PredictorSpec::with_hyper(self.kind, self.hyper.clone())
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.feature_names()
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features() {
            return Err(ModelError::SchemaMismatch(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.n_features()
            )));
        }
        Ok(self.params.predict(row))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(&ds.schema)?;
        let (x, _) = ds.to_matrix()?;
        Ok(x.iter().map(|r| self.params.predict(r)).collect())
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if schema.feature_names() != self.feature_names() {
            return Err(ModelError::SchemaMismatch(format!(
                "expected features {:?}, got {:?}",
                self.feature_names(),
                schema.feature_names()
            )));
        }
        Ok(())
    }

    /// Per-feature sum of split gains over all trees; zero for non-tree kinds.
    pub fn split_gains(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_features()];
        match &self.params {
            FittedParams::Tree(t) => t.accumulate_gain(&mut acc),
            FittedParams::Forest { trees } | FittedParams::Boosted { trees, .. } => {
                for t in trees {
                    t.accumulate_gain(&mut acc);
                }
            }
            _ => {}
        }
        acc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(m.version));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predict for TrainedModel {
    #[inline]
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.params.predict(x)
    }
}

/// Fits `spec` to `train`. All randomness derives from `seed`; forest tree
/// `t` uses seed `seed + t`.
pub fn fit(train: &Dataset, spec: &PredictorSpec, seed: u64) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    spec.hyper.validate(spec.kind)?;
    let (x, y) = train.to_matrix().map_err(|e| match e {
        DataError::NonNumericFeature(n) => ModelError::NonNumericFeature(n),
        other => ModelError::Data(other),
    })?;
    let params = fit_matrix(&x, &y, spec, seed);
    Ok(TrainedModel {
        version: MODEL_FORMAT_VERSION,
        kind: spec.kind,
        hyper: spec.hyper.clone(),
        schema: train.schema.clone(),
        params,
        train_seed: seed,
    })
}

pub(crate) fn fit_matrix(x: &[Vec<f64>], y: &[f64], spec: &PredictorSpec, seed: u64) -> FittedParams {
    let h = &spec.hyper;
    match spec.kind {
        ModelKind::DummyMean => FittedParams::Constant { value: mean(y) },
        ModelKind::DummyMedian => FittedParams::Constant {
            value: lower_median(y),
        },
        ModelKind::Linear => FittedParams::Linear(fit_least_squares(x, y)),
        ModelKind::Tree => {
            let cols = tree::Columns::from_rows(x);
            let params = tree::GrowParams {
                max_depth: h.max_depth(),
                min_samples_leaf: h.min_samples_leaf(),
                max_features: None,
                l2: 0.0,
            };
            let rows = (0..y.len()).collect();
            FittedParams::Tree(tree::grow(&cols, y, rows, &params, &mut SplitMix64::new(seed)))
        }
        ModelKind::Forest => {
            let cols = tree::Columns::from_rows(x);
            let m = cols.n_features();
            let params = tree::GrowParams {
                max_depth: h.max_depth(),
                min_samples_leaf: h.min_samples_leaf(),
                max_features: Some(((h.max_features_fraction() * m as f64).ceil() as usize).clamp(1, m.max(1))),
                l2: 0.0,
            };
            let n = y.len();
            let trees = (0..h.n_trees())
                .into_par_iter()
                .map(|t| {
                    let mut rng = SplitMix64::new(seed.wrapping_add(t as u64));
                    let rows: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
                    tree::grow(&cols, y, rows, &params, &mut rng)
                })
                .collect();
            FittedParams::Forest { trees }
        }
        ModelKind::Gbt => {
            let cols = tree::Columns::from_rows(x);
            let params = tree::GrowParams {
                max_depth: h.max_depth(),
                min_samples_leaf: h.min_samples_leaf(),
                max_features: None,
                l2: h.l2_leaf(),
            };
            let lr = h.learning_rate();
            let base = mean(y);
            let mut current = vec![base; y.len()];
            let mut trees = Vec::with_capacity(h.n_trees());
            let mut rng = SplitMix64::new(seed);
            for _ in 0..h.n_trees() {
                let residual: Vec<f64> = y.iter().zip(&current).map(|(t, f)| t - f).collect();
                let mut t = tree::grow(&cols, &residual, (0..y.len()).collect(), &params, &mut rng);
                t.scale_leaves(lr);
                for (f, row) in current.iter_mut().zip(x) {
                    *f += t.predict(row);
                }
                trees.push(t);
            }
            FittedParams::Boosted { base, trees }
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median; for even lengths the lower of the two middle values.
pub fn lower_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() - 1) / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, FeatureSpec, Row, Schema};
    use crate::synth::{generate, SynthConfig};

    fn ds(x: &[Vec<f64>], y: &[f64]) -> Dataset {
        let names: Vec<String> = (0..x[0].len()).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        Dataset::from_matrix(&refs, x, y, "y").unwrap()
    }

    #[test]
    fn dummies() {
        let d = ds(&[vec![0.0], vec![5.0], vec![9.0]], &[1.0, 2.0, 3.0]);
        let m = fit(&d, &PredictorSpec::new(ModelKind::DummyMean), 0).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap(), 2.0);
        assert_eq!(m.predict(&[100.0]).unwrap(), 2.0);
        let d = ds(&[vec![0.0], vec![5.0], vec![9.0]], &[1.0, 2.0, 10.0]);
        let m = fit(&d, &PredictorSpec::new(ModelKind::DummyMedian), 0).unwrap();
        assert_eq!(m.predict(&[3.0]).unwrap(), 2.0);
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
    }

    #[test]
    fn linear_exact_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64 + 1.0).collect();
        let m = fit(&ds(&x, &y), &PredictorSpec::new(ModelKind::Linear), 0).unwrap();
        let FittedParams::Linear(p) = &m.params else { panic!() };
        assert!((p.intercept - 1.0).abs() < 1e-8);
        assert!((p.coefficients[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn depth_one_tree_step() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let y: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 10.0 }).collect();
        let spec = PredictorSpec::with_hyper(ModelKind::Tree, Hyperparameters::new().with(MAX_DEPTH, 1.0));
        let m = fit(&ds(&x, &y), &spec, 0).unwrap();
        assert_eq!(m.predict(&[0.1]).unwrap(), 0.0);
        assert_eq!(m.predict(&[0.9]).unwrap(), 10.0);
    }

    #[test]
    fn gbt_zero_rounds_is_mean() {
        let d = generate(&SynthConfig::new(50, 1));
        let spec = PredictorSpec::with_hyper(ModelKind::Gbt, Hyperparameters::new().with(N_TREES, 0.0));
        let m = fit(&d, &spec, 0).unwrap();
        let (x, y) = d.to_matrix().unwrap();
        assert_eq!(m.predict(&x[3]).unwrap(), mean(&y));
    }

    #[test]
    fn errors() {
        let empty = Dataset::from_matrix(&["a"], &[], &[], "y").unwrap();
        assert!(matches!(
            fit(&empty, &PredictorSpec::new(ModelKind::Linear), 0),
            Err(ModelError::EmptyTrainingSet)
        ));
        let schema = Schema::new(vec![FeatureSpec::categorical("c", ["a", "b"])], "y").unwrap();
        let cat = Dataset::new(
            schema,
            vec![Row { features: vec![Some(crate::data::Value::Level("a".into()))], target: Some(1.0) }],
            "t",
        )
        .unwrap();
        assert!(matches!(
            fit(&cat, &PredictorSpec::new(ModelKind::Tree), 0),
            Err(ModelError::NonNumericFeature(_))
        ));
        let d = ds(&[vec![1.0]], &[1.0]);
        let m = fit(&d, &PredictorSpec::new(ModelKind::DummyMean), 0).unwrap();
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(ModelError::SchemaMismatch(_))));
    }

    #[test]
    fn hyperparameter_validation() {
        let h = Hyperparameters::new().with(LEARNING_RATE, 0.1);
        assert!(h.validate(ModelKind::Gbt).is_ok());
        assert!(h.validate(ModelKind::Tree).is_err());
        assert!(Hyperparameters::new().with(LEARNING_RATE, 1.5).validate(ModelKind::Gbt).is_err());
        assert!(Hyperparameters::new().with(MAX_DEPTH, 2.5).validate(ModelKind::Tree).is_err());
        assert!(Hyperparameters::new().with(MAX_FEATURES_FRACTION, 0.0).validate(ModelKind::Forest).is_err());
        assert!(Hyperparameters::new().with(N_TREES, 0.0).validate(ModelKind::Forest).is_err());
        assert!(Hyperparameters::new().with(N_TREES, 0.0).validate(ModelKind::Gbt).is_ok());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let d = generate(&SynthConfig::new(200, 3));
        for kind in ModelKind::ALL {
            let spec = PredictorSpec::with_hyper(
                kind,
                if matches!(kind, ModelKind::Forest | ModelKind::Gbt) {
                    Hyperparameters::new().with(N_TREES, 10.0)
                } else {
                    Hyperparameters::new()
                },
            );
            let m = fit(&d, &spec, 11).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m, "{kind}");
            let (x, _) = d.to_matrix().unwrap();
            for r in &x {
                assert_eq!(back.predict(r).unwrap().to_bits(), m.predict(r).unwrap().to_bits());
            }
        }
        let json = fit(&d, &PredictorSpec::new(ModelKind::DummyMean), 0).unwrap().to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["version", "kind", "schema", "params", "train_seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let bumped = json.replace("\"version\":1", "\"version\":99");
        assert!(matches!(TrainedModel::from_json(&bumped), Err(ModelError::UnsupportedVersion(99))));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("gbt".parse::<ModelKind>().unwrap(), ModelKind::Gbt);
        assert!("ann".parse::<ModelKind>().is_err());
    }
}
