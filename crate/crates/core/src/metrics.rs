//! Held-out evaluation: MAE, MAD, MSE and out-of-sample R².
//!
//! "MAD" here is the median absolute prediction error, `median |y − ŷ|`
//! (lower middle value for even counts), not the median absolute deviation
//! of `y` around its own median.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::models::{lower_median, ModelError, TrainedModel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{0} targets but {1} predictions")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub mae: f64,
    pub mad: f64,
    pub mse: f64,
    /// `None` when the test targets have zero variance.
    pub r2: Option<f64>,
    pub n_test: usize,
}

pub fn evaluate(
    model: &TrainedModel,
    test: &Dataset,
    label: impl Into<String>,
) -> Result<EvaluationReport, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let predictions = model.predict_dataset(test)?;
    let (_, y) = test.to_matrix().map_err(ModelError::from)?;
    score(label, &y, &predictions)
}

/// Scores predictions against observed targets.
pub fn score(
    label: impl Into<String>,
    y: &[f64],
    predicted: &[f64],
) -> Result<EvaluationReport, MetricsError> {
    if y.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    if y.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(y.len(), predicted.len()));
    }
    let n = y.len() as f64;
    let errors: Vec<f64> = y.iter().zip(predicted).map(|(a, b)| a - b).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let sse: f64 = errors.iter().map(|e| e * e).sum();
    let y_mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    Ok(EvaluationReport {
        model: label.into(),
        mae: abs.iter().sum::<f64>() / n,
        mad: lower_median(&abs),
        mse: sse / n,
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        n_test: y.len(),
    })
}

/// Plain-text table: Model, MAE, MAD, MSE, out-of-sample R².
pub fn format_table(reports: &[EvaluationReport]) -> String {
    let header = ["Model", "MAE", "MAD", "MSE", "Out-of-sample R²"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.2}", r.mae),
                format!("{:.2}", r.mad),
                format!("{:.2}", r.mse),
                r.r2.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}")),
            ]
        })
        .collect();
    let width = |c: usize| {
        rows.iter()
            .map(|r| r[c].chars().count())
            .chain(std::iter::once(header[c].chars().count()))
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..5).map(width).collect();
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (c, cell) in cells.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
        out.push('\n');
    }
    out
}
