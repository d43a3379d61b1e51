//! Deterministic SVG explanation plots.
//!
//! | kind          | input                 | data marks                                   |
//! |---------------|-----------------------|----------------------------------------------|
//! | `force`       | one attribution       | `rect.bar` per nonzero φ among the top k     |
//! | `summary_bar` | attribution matrix    | `rect.bar` per top-k feature, by mean \|φ\|  |
//! | `beeswarm`    | attribution matrix    | `circle.dot` per (row, top-k feature)        |
//! | `dependence`  | attribution matrix    | `circle.dot` per row                          |
//! | `decision`    | attribution matrix    | `polyline.path` per row                       |
//! | `heatmap`     | attribution matrix    | `rect.cell` per (row, top-k feature)         |
//! | `histogram`   | dataset               | `rect.bar` per 25-unit target bin            |
//!
//! Stacked multi-row force plots are covered by `heatmap`, whose columns are
//! rows in clustering order.

mod cluster;
mod render;
pub mod svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::shapley::Attribution;

pub use cluster::leaf_order;

pub const DEFAULT_TOP_K: usize = 23;
pub const HISTOGRAM_BIN_WIDTH: f64 = 25.0;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    EmptyData,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("{kind} plots cannot be drawn from {data}")]
    KindMismatch { kind: PlotKind, data: &'static str },
    #[error("invalid plot spec: {0}")]
    InvalidSpec(String),
    #[error("attributions do not share one feature set")]
    InconsistentRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Force,
    SummaryBar,
    Beeswarm,
    Dependence,
    Decision,
    Heatmap,
    Histogram,
}

impl PlotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlotKind::Force => "force",
            PlotKind::SummaryBar => "summary_bar",
            PlotKind::Beeswarm => "beeswarm",
            PlotKind::Dependence => "dependence",
            PlotKind::Decision => "decision",
            PlotKind::Heatmap => "heatmap",
            PlotKind::Histogram => "histogram",
        }
    }
}

impl std::fmt::Display for PlotKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub kind: PlotKind,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub width: Option<u32>,
    #[serde(default)]
    pub height: Option<u32>,
    /// Dependence plots: feature on the x axis.
    #[serde(default)]
    pub feature: Option<String>,
    /// Dependence plots: feature whose value colors the markers.
    #[serde(default)]
    pub color_by: Option<String>,
}

impl PlotSpec {
    pub fn new(kind: PlotKind) -> Self {
        Self {
            kind,
            top_k: DEFAULT_TOP_K,
            width: None,
            height: None,
            feature: None,
            color_by: None,
        }
    }

    pub fn top_k(mut self, k: usize) -> Self {
        self.top_k = k;
        self
    }

    pub fn dependence(feature: impl Into<String>, color_by: impl Into<String>) -> Self {
        Self {
            feature: Some(feature.into()),
            color_by: Some(color_by.into()),
            ..Self::new(PlotKind::Dependence)
        }
    }

    pub fn validate(&self) -> Result<(), PlotError> {
        if self.top_k == 0 {
            return Err(PlotError::InvalidSpec("top_k must be at least 1".into()));
        }
        if self.width == Some(0) || self.height == Some(0) {
            return Err(PlotError::InvalidSpec("width and height must be positive".into()));
        }
        if self.kind == PlotKind::Dependence {
            match (&self.feature, &self.color_by) {
                (Some(f), Some(c)) if f == c => {
                    return Err(PlotError::InvalidSpec("feature and color_by must differ".into()))
                }
                (Some(_), Some(_)) => {}
                _ => {
                    return Err(PlotError::InvalidSpec(
                        "dependence plots need `feature` and `color_by`".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// File stem used by the CLI: `<kind>_<label>`.
    pub fn file_name(&self, label: &str) -> String {
        format!("{}_{}.svg", self.kind.as_str(), label)
    }
}

/// Attributions over a common feature set, one per explained row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub rows: Vec<Attribution>,
}

impl AttributionMatrix {
    pub fn new(rows: Vec<Attribution>) -> Result<Self, PlotError> {
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.features != first.features) {
                return Err(PlotError::InconsistentRows);
            }
        }
        Ok(Self { rows })
    }

    pub fn features(&self) -> &[String] {
        self.rows.first().map_or(&[], |r| r.features.as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PlotData<'a> {
    Local(&'a Attribution),
    Matrix(&'a AttributionMatrix),
    Dataset(&'a Dataset),
}

impl PlotData<'_> {
    fn describe(&self) -> &'static str {
        match self {
            PlotData::Local(_) => "a single attribution",
            PlotData::Matrix(_) => "an attribution matrix",
            PlotData::Dataset(_) => "a dataset",
        }
    }
}

/// Renders one plot as an SVG document.
pub fn render_plot(spec: &PlotSpec, data: PlotData<'_>) -> Result<String, PlotError> {
    spec.validate()?;
    let mismatch = || PlotError::KindMismatch {
        kind: spec.kind,
        data: data.describe(),
    };
    match (spec.kind, data) {
        (PlotKind::Force, PlotData::Local(a)) => render::force(spec, a),
        (PlotKind::Force, PlotData::Matrix(m)) if m.len() == 1 => render::force(spec, &m.rows[0]),
        (PlotKind::Force, PlotData::Matrix(m)) if m.is_empty() => Err(PlotError::EmptyData),
        (PlotKind::Histogram, PlotData::Dataset(d)) => render::histogram(spec, d),
        (PlotKind::Force | PlotKind::Histogram, _) => Err(mismatch()),
        (_, PlotData::Matrix(m)) => {
            if m.is_empty() {
                return Err(PlotError::EmptyData);
            }
            match spec.kind {
                PlotKind::SummaryBar => render::summary_bar(spec, m),
                PlotKind::Beeswarm => render::beeswarm(spec, m),
                PlotKind::Dependence => render::dependence(spec, m),
                PlotKind::Decision => render::decision(spec, m),
                PlotKind::Heatmap => render::heatmap(spec, m),
                PlotKind::Force | PlotKind::Histogram => unreachable!(),
            }
        }
        _ => Err(mismatch()),
    }
}
