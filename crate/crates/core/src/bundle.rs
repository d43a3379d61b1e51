//! The serving unit: schema, fitted model, background set and precomputed
//! global importance in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Schema;
use crate::metrics::EvaluationReport;
use crate::models::TrainedModel;
use crate::shapley::{BackgroundSet, FeatureImportance};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle is invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub label: String,
    #[serde(default)]
    pub train_date: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub schema: Schema,
    pub model: TrainedModel,
    pub background: BackgroundSet,
    pub global_importance: Vec<FeatureImportance>,
    pub metadata: BundleMetadata,
}

impl ModelBundle {
    pub fn new(
        model: TrainedModel,
        background: BackgroundSet,
        global_importance: Vec<FeatureImportance>,
        metadata: BundleMetadata,
    ) -> Result<Self, BundleError> {
        let bundle = Self {
            version: BUNDLE_FORMAT_VERSION,
            schema: model.schema.clone(),
            model,
            background,
            global_importance,
            metadata,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Checks that schema, model, background and importance agree.
    pub fn validate(&self) -> Result<(), BundleError> {
        let invalid = |m: String| Err(BundleError::Invalid(m));
        if self.version != BUNDLE_FORMAT_VERSION {
            return invalid(format!("unsupported version {}", self.version));
        }
        if self.model.schema != self.schema {
            return invalid("model schema differs from bundle schema".into());
        }
        let names = self.schema.feature_names();
        if self.background.features != names {
            return invalid("background features differ from schema".into());
        }
        if self.background.rows.is_empty() {
            return invalid("background set is empty".into());
        }
        if self.background.rows.iter().any(|r| r.len() != names.len() || r.iter().any(|v| !v.is_finite())) {
            return invalid("background row does not conform to schema".into());
        }
        if self.global_importance.iter().any(|g| !names.contains(&g.feature)) {
            return invalid("global importance names an unknown feature".into());
        }
        if self.schema.has_categoricals() {
            return invalid("bundle schema must be one-hot encoded".into());
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn to_json(&self) -> Result<String, BundleError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BundleError> {
        let b: ModelBundle = serde_json::from_str(s)?;
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BundleError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, ModelKind, PredictorSpec};
    use crate::shapley::{global_importance, Method};
    use crate::synth::{generate, SynthConfig};

    fn bundle() -> ModelBundle {
        let d = generate(&SynthConfig::new(80, 2));
        let m = fit(&d, &PredictorSpec::new(ModelKind::Linear), 0).unwrap();
        let (x, _) = d.to_matrix().unwrap();
        let bg = BackgroundSet::sample(m.feature_names(), &x, 20, 1).unwrap();
        let imp = global_importance(&m, &d.select(&[0, 1, 2]), &bg, Method::Exact).unwrap();
        ModelBundle::new(m, bg, imp, BundleMetadata { label: "linear".into(), ..Default::default() }).unwrap()
    }

    #[test]
    fn round_trip() {
        let b = bundle();
        let back = ModelBundle::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn rejects_inconsistent_background() {
        let mut b = bundle();
        b.background.rows[0].pop();
        assert!(matches!(b.validate(), Err(BundleError::Invalid(_))));
        let mut b = bundle();
        b.background.features.reverse();
        assert!(b.validate().is_err());
        let mut b = bundle();
        b.global_importance[0].feature = "nope".into();
        assert!(b.validate().is_err());
    }
}
