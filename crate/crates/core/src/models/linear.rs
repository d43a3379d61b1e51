use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Ridge jitter added to the diagonal of the normal equations.
pub const RIDGE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearParams {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}

/// Least squares via the normal equations on centered data, so the intercept
/// is not penalized: `(XcᵀXc + λI) β = Xcᵀyc`, `b₀ = ȳ − x̄ᵀβ`.
pub fn fit_least_squares(x: &[Vec<f64>], y: &[f64]) -> LinearParams {
    let n = y.len();
    let m = x.first().map_or(0, Vec::len);
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..m)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    if m == 0 {
        return LinearParams {
            intercept: y_mean,
            coefficients: Vec::new(),
        };
    }
    let xc = DMatrix::from_fn(n, m, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
    let mut gram = xc.transpose() * &xc;
    for j in 0..m {
        gram[(j, j)] += RIDGE_JITTER;
    }
    let rhs = xc.transpose() * yc;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::zeros(m)),
    };
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(b, mu)| b * mu)
            .sum::<f64>();
    LinearParams {
        intercept,
        coefficients,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64 + 1.0).collect();
        let p = fit_least_squares(&x, &y);
        assert!((p.intercept - 1.0).abs() < 1e-8);
        assert!((p.coefficients[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn two_features_and_constant_column() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64, ((i * 17) % 11) as f64, 4.0])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 - 0.5 * r[0] + 1.5 * r[1]).collect();
        let p = fit_least_squares(&x, &y);
        assert!((p.coefficients[0] + 0.5).abs() < 1e-7);
        assert!((p.coefficients[1] - 1.5).abs() < 1e-7);
        assert_eq!(p.coefficients[2], 0.0);
        assert!((p.predict(&x[5]) - y[5]).abs() < 1e-7);
    }
}
