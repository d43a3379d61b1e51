//! Build, evaluate and explain tabular regression models.
//!
//! The crate covers the whole loop: CSV ingestion and cleansing
//! ([`data`]), a synthetic listing-price generator with a known pricing rule
//! ([`synth`]), a roster of regressors tuned by k-fold grid search
//! ([`models`]), held-out evaluation ([`metrics`]), exact and sampled
//! Shapley attributions ([`shapley`]), SVG explanation plots ([`plots`]) and
//! the serialized [`bundle::ModelBundle`] served over HTTP.

pub mod bundle;
pub mod data;
pub mod metrics;
pub mod models;
pub mod plots;
pub mod rng;
pub mod shapley;
pub mod synth;

pub use bundle::{BundleMetadata, ModelBundle};
pub use data::{CleanLog, CleanPolicy, Dataset, FeatureKind, FeatureSpec, Schema};
pub use metrics::EvaluationReport;
pub use models::{ModelKind, Predict, PredictorSpec, TrainedModel};
pub use shapley::{Attribution, BackgroundSet, Method};
