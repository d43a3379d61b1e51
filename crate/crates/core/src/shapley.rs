//! Model-agnostic Shapley attributions.
//!
//! A coalition `S` of known features is valued by interventional
//! marginalization over a background set `B`:
//!
//! ```text
//! v(S) = (1/|B|) Σ_{b∈B} f(x_S ∪ b_{F∖S})
//! ```
//!
//! with `v(F) = f(x)` taken directly. Exact attributions enumerate every
//! coalition:
//!
//! ```text
//! φᵢ = Σ_{S ⊆ F∖{i}} |S|!(M−|S|−1)!/M! · (v(S ∪ {i}) − v(S)),   φ₀ = v(∅)
//! ```
//!
//! so `φ₀ + Σφᵢ = f(x)`. The sampled estimator averages marginal
//! contributions along random feature orderings.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Schema};
use crate::models::Predict;
use crate::rng::SplitMix64;

/// Largest feature count accepted by [`exact_shapley`].
pub const EXACT_LIMIT: usize = 20;
/// Background rows drawn when no size is configured.
pub const DEFAULT_BACKGROUND_SIZE: usize = 100;

#[derive(Debug, Error)]
pub enum ShapleyError {
    #[error("exact attribution over {m} features exceeds the limit of {limit}; use the sampled method")]
    TooManyFeatures { m: usize, limit: usize },
    #[error("number of permutations must be at least 1")]
    InvalidSampleCount,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("mask has {got} entries, attribution has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("feature `{0}` has no group in the schema")]
    UnknownGroup(String),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("no rows to explain")]
    EmptyData,
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = ShapleyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSelection {
    /// `uniform_without_replacement` or `explicit`.
    pub policy: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet {
    pub features: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub selection: BackgroundSelection,
}

impl BackgroundSet {
    pub fn new(features: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_selection(
            features,
            rows,
            BackgroundSelection {
                policy: "explicit".into(),
                seed: None,
            },
        )
    }

    /// `min(size, N)` rows drawn uniformly without replacement, kept in
    /// their original order.
    pub fn sample(features: Vec<String>, data: &[Vec<f64>], size: usize, seed: u64) -> Result<Self> {
        let mut idx = SplitMix64::new(seed).sample_distinct(data.len(), size);
        idx.sort_unstable();
        Self::with_selection(
            features,
            idx.iter().map(|&i| data[i].clone()).collect(),
            BackgroundSelection {
                policy: "uniform_without_replacement".into(),
                seed: Some(seed),
            },
        )
    }

    fn with_selection(
        features: Vec<String>,
        rows: Vec<Vec<f64>>,
        selection: BackgroundSelection,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(ShapleyError::EmptyBackground);
        }
        if let Some(r) = rows.iter().find(|r| r.len() != features.len()) {
            return Err(ShapleyError::SchemaMismatch(format!(
                "background row has {} values for {} features",
                r.len(),
                features.len()
            )));
        }
        Ok(Self {
            features,
            rows,
            selection,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-feature mean over the background rows.
    pub fn feature_means(&self) -> Vec<f64> {
        let b = self.rows.len() as f64;
        (0..self.n_features())
            .map(|j| self.rows.iter().map(|r| r[j]).sum::<f64>() / b)
            .collect()
    }
}

/// Features treated as known; `members[i]` is the inclusion flag z′ᵢ.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Coalition {
    members: Vec<bool>,
}

impl Coalition {
    pub fn empty(m: usize) -> Self {
        Self {
            members: vec![false; m],
        }
    }

    pub fn full(m: usize) -> Self {
        Self {
            members: vec![true; m],
        }
    }

    pub fn from_indices(m: usize, indices: &[usize]) -> Self {
        let mut c = Self::empty(m);
        for &i in indices {
            c.members[i] = true;
        }
        c
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { members: mask }
    }

    /// Bit `i` of `bits` marks feature `i`.
    pub fn from_bits(m: usize, bits: u64) -> Self {
        Self {
            members: (0..m).map(|i| bits >> i & 1 == 1).collect(),
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&b| b)
    }

    pub fn n_features(&self) -> usize {
        self.members.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.members
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Exact,
    Sampled { n_perms: usize, seed: u64 },
}

impl Method {
    pub const DEFAULT_N_PERMS: usize = 1_000;
    pub const DEFAULT_SEED: u64 = 0;

    pub fn sampled_default() -> Self {
        Method::Sampled {
            n_perms: Self::DEFAULT_N_PERMS,
            seed: Self::DEFAULT_SEED,
        }
    }
}

/// One local explanation: `prediction = base_value + Σ contributions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "AttributionWire", from = "AttributionWire")]
pub struct Attribution {
    pub features: Vec<String>,
    pub instance: Vec<f64>,
    pub base_value: f64,
    pub contributions: Vec<f64>,
    pub prediction: f64,
    pub method: Method,
}

impl Attribution {
    pub fn n_features(&self) -> usize {
        self.contributions.len()
    }

    /// `|φ₀ + Σφᵢ − f(x)|`.
    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.contributions.iter().sum::<f64>() - self.prediction).abs()
    }

    /// Feature indices by descending `|φ|`, ties by index.
    pub fn order_by_magnitude(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_features()).collect();
        idx.sort_by(|&a, &b| {
            self.contributions[b]
                .abs()
                .total_cmp(&self.contributions[a].abs())
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn phi(&self, feature: &str) -> Option<f64> {
        self.features
            .iter()
            .position(|f| f == feature)
            .map(|i| self.contributions[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEntry {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AttributionWire {
    base_value: f64,
    prediction: f64,
    #[serde(flatten)]
    method: Method,
    contributions: Vec<ContributionEntry>,
}

impl From<Attribution> for AttributionWire {
    fn from(a: Attribution) -> Self {
        let contributions = a
            .order_by_magnitude()
            .into_iter()
            .map(|i| ContributionEntry {
                feature: a.features[i].clone(),
                value: a.instance[i],
                phi: a.contributions[i],
            })
            .collect();
        Self {
            base_value: a.base_value,
            prediction: a.prediction,
            method: a.method,
            contributions,
        }
    }
}

impl From<AttributionWire> for Attribution {
    fn from(w: AttributionWire) -> Self {
        Self {
            features: w.contributions.iter().map(|c| c.feature.clone()).collect(),
            instance: w.contributions.iter().map(|c| c.value).collect(),
            contributions: w.contributions.iter().map(|c| c.phi).collect(),
            base_value: w.base_value,
            prediction: w.prediction,
            method: w.method,
        }
    }
}

/// `w(s, M) = s!(M−1−s)!/M! = 1 / (M · C(M−1, s))`.
pub fn shapley_weight(s: usize, m: usize) -> f64 {
    debug_assert!(s < m);
    let k = s.min(m - 1 - s);
    let mut binom = 1.0;
    for j in 0..k {
        binom = binom * (m - 1 - j) as f64 / (j + 1) as f64;
    }
    1.0 / (m as f64 * binom)
}

fn check_instance(x: &[f64], bg: &BackgroundSet) -> Result<()> {
    if x.len() != bg.n_features() {
        return Err(ShapleyError::SchemaMismatch(format!(
            "instance has {} values, background has {} features",
            x.len(),
            bg.n_features()
        )));
    }
    Ok(())
}

/// Mean model output over hybrids that take `in_s` features from `x` and the
/// rest from each background row, summed in background order as offsets
/// from the first hybrid so that identical outputs average to themselves.
fn coalition_value<P, F>(model: &P, x: &[f64], bg: &BackgroundSet, in_s: F, buf: &mut Vec<f64>) -> f64
where
    P: Predict + ?Sized,
    F: Fn(usize) -> bool,
{
    let m = x.len();
    let known: Vec<usize> = (0..m).filter(|&i| in_s(i)).collect();
    if known.len() == m {
        return model.predict_row(x);
    }
    let hybrid = |b: &[f64], buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend_from_slice(b);
        for &i in &known {
            buf[i] = x[i];
        }
        model.predict_row(buf)
    };
    let first = hybrid(&bg.rows[0], buf);
    let mut offset = 0.0;
    for b in &bg.rows[1..] {
        offset += hybrid(b, buf) - first;
    }
    first + offset / bg.rows.len() as f64
}

/// `v(S)`; the full coalition returns `f(x)` exactly.
pub fn value_function<P: Predict + ?Sized>(
    model: &P,
    x: &[f64],
    coalition: &Coalition,
    bg: &BackgroundSet,
) -> Result<f64> {
    check_instance(x, bg)?;
    if coalition.n_features() != x.len() {
        return Err(ShapleyError::LengthMismatch {
            expected: x.len(),
            got: coalition.n_features(),
        });
    }
    let mut buf = Vec::with_capacity(x.len());
    Ok(coalition_value(model, x, bg, |i| coalition.contains(i), &mut buf))
}

/// Values of all `2^M` coalitions indexed by bitmask.
fn all_coalition_values<P: Predict + ?Sized>(model: &P, x: &[f64], bg: &BackgroundSet) -> Vec<f64> {
    let n_masks = 1usize << x.len();
    (0..n_masks)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(x.len()),
            |buf, mask| coalition_value(model, x, bg, |i| mask >> i & 1 == 1, buf),
        )
        .collect()
}

pub fn exact_shapley<P: Predict + ?Sized>(model: &P, x: &[f64], bg: &BackgroundSet) -> Result<Attribution> {
    check_instance(x, bg)?;
    let m = x.len();
    if m > EXACT_LIMIT {
        return Err(ShapleyError::TooManyFeatures {
            m,
            limit: EXACT_LIMIT,
        });
    }
    let values = all_coalition_values(model, x, bg);
    let weights: Vec<f64> = (0..m).map(|s| shapley_weight(s, m)).collect();
    let contributions = (0..m)
        .map(|i| {
            let bit = 1usize << i;
            let mut phi = 0.0;
            for mask in 0..values.len() {
                if mask & bit == 0 {
                    let s = mask.count_ones() as usize;
                    phi += weights[s] * (values[mask | bit] - values[mask]);
                }
            }
            phi
        })
        .collect();
    Ok(Attribution {
        features: bg.features.clone(),
        instance: x.to_vec(),
        base_value: values[0],
        contributions,
        prediction: values[values.len() - 1],
        method: Method::Exact,
    })
}

/// Permutation-sampling estimate. Coalition values are cached while `M` is
/// small enough for the cache to stay bounded.
pub fn sampled_shapley<P: Predict + ?Sized>(
    model: &P,
    x: &[f64],
    bg: &BackgroundSet,
    n_perms: usize,
    seed: u64,
) -> Result<Attribution> {
    check_instance(x, bg)?;
    if n_perms == 0 {
        return Err(ShapleyError::InvalidSampleCount);
    }
    let m = x.len();
    let mut buf = Vec::with_capacity(m);
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let cacheable = m <= EXACT_LIMIT;
    let mut value = |members: &[bool], buf: &mut Vec<f64>| -> f64 {
        if cacheable {
            let key = members
                .iter()
                .enumerate()
                .fold(0u64, |k, (i, &b)| k | (u64::from(b) << i));
            *cache
                .entry(key)
                .or_insert_with(|| coalition_value(model, x, bg, |i| members[i], buf))
        } else {
            coalition_value(model, x, bg, |i| members[i], buf)
        }
    };

    let mut members = vec![false; m];
    let base_value = value(&members, &mut buf);
    let mut credit = vec![0.0; m];
    let mut rng = SplitMix64::new(seed);
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..n_perms {
        for (i, o) in order.iter_mut().enumerate() {
            *o = i;
        }
        rng.shuffle(&mut order);
        members.iter_mut().for_each(|b| *b = false);
        let mut prev = base_value;
        for &f in &order {
            members[f] = true;
            let cur = value(&members, &mut buf);
            credit[f] += cur - prev;
            prev = cur;
        }
    }
    let contributions = credit.iter().map(|c| c / n_perms as f64).collect();
    Ok(Attribution {
        features: bg.features.clone(),
        instance: x.to_vec(),
        base_value,
        contributions,
        prediction: model.predict_row(x),
        method: Method::Sampled { n_perms, seed },
    })
}

pub fn attribute<P: Predict + ?Sized>(
    model: &P,
    x: &[f64],
    bg: &BackgroundSet,
    method: Method,
) -> Result<Attribution> {
    match method {
        Method::Exact => exact_shapley(model, x, bg),
        Method::Sampled { n_perms, seed } => sampled_shapley(model, x, bg, n_perms, seed),
    }
}

/// Additive explanation model `g(z′) = φ₀ + Σ φᵢ z′ᵢ`.
pub fn eval_explanation(attr: &Attribution, mask: &[bool]) -> Result<f64> {
    if mask.len() != attr.n_features() {
        return Err(ShapleyError::LengthMismatch {
            expected: attr.n_features(),
            got: mask.len(),
        });
    }
    Ok(attr.base_value
        + attr
            .contributions
            .iter()
            .zip(mask)
            .filter(|(_, &z)| z)
            .map(|(phi, _)| phi)
            .sum::<f64>())
}

/// Attributions for every row, in row order. Sampled attributions of row
/// `r` use seed `seed + r`.
pub fn attribute_rows<P: Predict + ?Sized>(
    model: &P,
    rows: &[Vec<f64>],
    bg: &BackgroundSet,
    method: Method,
) -> Result<Vec<Attribution>> {
    if rows.is_empty() {
        return Err(ShapleyError::EmptyData);
    }
    rows.par_iter()
        .enumerate()
        .map(|(r, x)| {
            let method = match method {
                Method::Exact => Method::Exact,
                Method::Sampled { n_perms, seed } => Method::Sampled {
                    n_perms,
                    seed: seed.wrapping_add(r as u64),
                },
            };
            attribute(model, x, bg, method)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
}

/// Mean `|φ|` per feature, descending; ties by feature index.
pub fn importance_from(attrs: &[Attribution]) -> Result<Vec<FeatureImportance>> {
    let first = attrs.first().ok_or(ShapleyError::EmptyData)?;
    let m = first.n_features();
    let mut sums = vec![0.0; m];
    for a in attrs {
        if a.n_features() != m || a.features != first.features {
            return Err(ShapleyError::SchemaMismatch(
                "attributions do not share one feature set".into(),
            ));
        }
        for (s, phi) in sums.iter_mut().zip(&a.contributions) {
            *s += phi.abs();
        }
    }
    let n = attrs.len() as f64;
    let mut ranked: Vec<(usize, f64)> = sums.into_iter().map(|s| s / n).enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .map(|(i, importance)| FeatureImportance {
            feature: first.features[i].clone(),
            importance,
        })
        .collect())
}

pub fn global_importance<P: Predict + ?Sized>(
    model: &P,
    data: &Dataset,
    bg: &BackgroundSet,
    method: Method,
) -> Result<Vec<FeatureImportance>> {
    let (x, _) = data.to_matrix()?;
    importance_from(&attribute_rows(model, &x, bg, method)?)
}

/// Sums the attributions of one-hot columns into their source feature.
/// Ungrouped features pass through. The instance value of a multi-column
/// group is the position of its active column (`-1` when none is set).
pub fn group_attribution(attr: &Attribution, schema: &Schema) -> Result<Attribution> {
    let mut names: Vec<String> = Vec::new();
    let mut phis: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    for (i, feature) in attr.features.iter().enumerate() {
        let spec = schema
            .features
            .iter()
            .find(|f| &f.name == feature)
            .ok_or_else(|| ShapleyError::UnknownGroup(feature.clone()))?;
        let source = spec.source_name();
        match names.iter().position(|n| n == source) {
            Some(g) => {
                if attr.instance[i] == 1.0 {
                    values[g] = members[g] as f64;
                }
                phis[g] += attr.contributions[i];
                members[g] += 1;
            }
            None => {
                names.push(source.to_string());
                phis.push(attr.contributions[i]);
                values.push(if spec.group.is_some() {
                    if attr.instance[i] == 1.0 {
                        0.0
                    } else {
                        -1.0
                    }
                } else {
                    attr.instance[i]
                });
                members.push(1);
            }
        }
    }
    Ok(Attribution {
        features: names,
        instance: values,
        base_value: attr.base_value,
        contributions: phis,
        prediction: attr.prediction,
        method: attr.method,
    })
}
