//! Pipeline configuration. The published schema lives in
//! `crates/cli/config.schema.json`.

use std::path::{Path, PathBuf};

use attrib_core::data::CleanPolicy;
use attrib_core::models::{Hyperparameters, ModelKind};
use attrib_core::plots::PlotSpec;
use attrib_core::shapley::{Method, DEFAULT_BACKGROUND_SIZE};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_EXPLAIN_ROWS: usize = 200;

const TOP_LEVEL_KEYS: [&str; 14] = [
    "seed",
    "data",
    "clean",
    "test_fraction",
    "cv_k",
    "models",
    "feature_selection",
    "shapley",
    "plots",
    "top_k",
    "out",
    "unit",
    "label",
    "train_date",
];
const REQUIRED_KEYS: [&str; 3] = ["seed", "data", "models"];

#[derive(Debug, Error)]
#[error("config error in `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synth {
        n: usize,
        /// Defaults to the pipeline seed.
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        noise_sd: Option<f64>,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub kind: ModelKind,
    /// Defaults to `default_grid(kind)`.
    #[serde(default)]
    pub grid: Option<Vec<Hyperparameters>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelEntryWire {
    Kind(ModelKind),
    Entry(ModelEntry),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Exact,
    Sampled,
}

impl std::str::FromStr for MethodName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(MethodName::Exact),
            "sampled" => Ok(MethodName::Sampled),
            other => Err(format!("unknown method `{other}` (expected exact or sampled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapleyConfig {
    #[serde(default = "default_method")]
    pub method: MethodName,
    #[serde(default = "default_n_perms")]
    pub n_perms: usize,
    /// Seed of the sampled method; defaults to the pipeline seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_background_size")]
    pub background_size: usize,
    /// Training rows explained for global plots; `null` explains all.
    #[serde(default = "default_explain_rows")]
    pub explain_rows: Option<usize>,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            n_perms: default_n_perms(),
            seed: None,
            background_size: default_background_size(),
            explain_rows: default_explain_rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSelection {
    /// Keep features whose share of boosting split gain exceeds this.
    pub gain_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataSource,
    #[serde(default = "default_clean")]
    pub clean: CleanPolicy,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_cv_k")]
    pub cv_k: usize,
    #[serde(deserialize_with = "deserialize_models")]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub feature_selection: Option<FeatureSelection>,
    #[serde(default)]
    pub shapley: ShapleyConfig,
    /// `None` selects the default plot set.
    #[serde(default)]
    pub plots: Option<Vec<PlotSpec>>,
    /// Overrides `top_k` of every plot.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub train_date: Option<String>,
}

fn default_method() -> MethodName {
    MethodName::Exact
}
fn default_n_perms() -> usize {
    Method::DEFAULT_N_PERMS
}
fn default_background_size() -> usize {
    DEFAULT_BACKGROUND_SIZE
}
fn default_explain_rows() -> Option<usize> {
    Some(DEFAULT_EXPLAIN_ROWS)
}
fn default_clean() -> CleanPolicy {
    CleanPolicy::strict(None)
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_cv_k() -> usize {
    5
}

fn deserialize_models<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<ModelEntry>, D::Error> {
    let wire = Vec::<ModelEntryWire>::deserialize(d)?;
    Ok(wire
        .into_iter()
        .map(|w| match w {
            ModelEntryWire::Kind(kind) => ModelEntry { kind, grid: None },
            ModelEntryWire::Entry(e) => e,
        })
        .collect())
}

impl PipelineConfig {
    /// Parses a config document, or the `config` section of a run manifest.
    pub fn from_value(mut v: Value) -> Result<Self, ConfigError> {
        if v.get("manifest_version").is_some() {
            v = v
                .get_mut("config")
                .map(Value::take)
                .ok_or_else(|| ConfigError::new("config", "manifest has no config section"))?;
        }
        let obj = v
            .as_object()
            .ok_or_else(|| ConfigError::new("<root>", "config must be a JSON object"))?;
        if let Some(key) = obj.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::new(key.clone(), "unknown key"));
        }
        if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(ConfigError::new(*key, "missing required field"));
        }
        for key in obj.keys() {
            let mut probe = serde_json::Map::new();
            for req in REQUIRED_KEYS {
                if req != key {
                    probe.insert(req.into(), placeholder(req));
                }
            }
            probe.insert(key.clone(), obj[key].clone());
            if let Err(e) = serde_json::from_value::<PipelineConfig>(Value::Object(probe)) {
                return Err(ConfigError::new(key.clone(), e.to_string()));
            }
        }
        let cfg: PipelineConfig =
            serde_json::from_value(v).map_err(|e| ConfigError::new("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let v: Value = serde_json::from_str(s).map_err(|e| ConfigError::new("<root>", e.to_string()))?;
        Self::from_value(v)
    }

    /// Reads a config file. Relative CSV paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path, schema } = &mut cfg.data {
            for p in [path, schema] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.models.is_empty() {
            return Err(ConfigError::new("models", "roster must not be empty"));
        }
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|o| o.kind == m.kind) {
                return Err(ConfigError::new("models", format!("`{}` listed twice", m.kind)));
            }
            if let Some(grid) = &m.grid {
                if grid.is_empty() {
                    return Err(ConfigError::new("models", format!("`{}` has an empty grid", m.kind)));
                }
                for h in grid {
                    h.validate(m.kind).map_err(|e| ConfigError::new("models", e.to_string()))?;
                }
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ConfigError::new("test_fraction", "must lie strictly between 0 and 1"));
        }
        if self.cv_k < 2 {
            return Err(ConfigError::new("cv_k", "must be at least 2"));
        }
        match &self.data {
            DataSource::Synth { n: 0, .. } => return Err(ConfigError::new("data", "synth n must be positive")),
            DataSource::Synth { noise_sd: Some(sd), .. } if !(*sd >= 0.0) => {
                return Err(ConfigError::new("data", "noise_sd must be non-negative"))
            }
            _ => {}
        }
        if let Some(fs) = &self.feature_selection {
            if !(0.0..1.0).contains(&fs.gain_threshold) {
                return Err(ConfigError::new("feature_selection", "gain_threshold must lie in [0, 1)"));
            }
        }
        let s = &self.shapley;
        if s.n_perms == 0 {
            return Err(ConfigError::new("shapley", "n_perms must be at least 1"));
        }
        if s.background_size == 0 {
            return Err(ConfigError::new("shapley", "background_size must be at least 1"));
        }
        if s.explain_rows == Some(0) {
            return Err(ConfigError::new("shapley", "explain_rows must be at least 1"));
        }
        if self.top_k == Some(0) {
            return Err(ConfigError::new("top_k", "must be at least 1"));
        }
        for p in self.plots.iter().flatten() {
            p.validate().map_err(|e| ConfigError::new("plots", e.to_string()))?;
        }
        Ok(())
    }

    pub fn method(&self) -> Method {
        match self.shapley.method {
            MethodName::Exact => Method::Exact,
            MethodName::Sampled => Method::Sampled {
                n_perms: self.shapley.n_perms,
                seed: self.shapley.seed.unwrap_or(self.seed),
            },
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn placeholder(key: &str) -> Value {
    match key {
        "seed" => Value::from(0),
        "data" => serde_json::json!({"synth": {"n": 1}}),
        _ => serde_json::json!(["dummy_mean"]),
    }
}
