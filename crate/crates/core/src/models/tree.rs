//! Regression trees grown on squared loss.
//!
//! One builder serves CART, the forest members, and the boosting rounds. At a
//! node holding target sum `S` over `n` rows, a split into `(S_L, n_L)` and
//! `(S_R, n_R)` scores
//!
//! ```text
//! gain = S_L²/(n_L + λ) + S_R²/(n_R + λ) − S²/(n + λ)
//! ```
//!
//! and a leaf predicts `S / (n + λ)`. With `λ = 0` the gain is the drop in
//! sum of squared errors and leaves are means (plain variance reduction).

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
}

/// Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Adds each split's gain to `acc[feature]`.
    pub fn accumulate_gain(&self, acc: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                acc[*feature] += gain;
            }
        }
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
    pub l2: f64,
}

/// Column-major view of a training matrix.
pub struct Columns {
    cols: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Columns {
    pub fn from_rows(x: &[Vec<f64>]) -> Self {
        let m = x.first().map_or(0, Vec::len);
        let mut cols = vec![Vec::with_capacity(x.len()); m];
        for row in x {
            for (c, &v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
        }
        Self { cols, n_rows: x.len() }
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    pos: usize,
}

/// Grows a tree on the rows listed in `rows` (repeats allowed, as in a
/// bootstrap sample). `rng` is consulted only when `max_features` subsamples.
pub fn grow(
    data: &Columns,
    y: &[f64],
    rows: Vec<usize>,
    params: &GrowParams,
    rng: &mut SplitMix64,
) -> Tree {
    let mut builder = Builder {
        data,
        y,
        params,
        rng,
        nodes: Vec::new(),
    };
    builder.build(rows, 0);
    Tree { nodes: builder.nodes }
}

struct Builder<'a> {
    data: &'a Columns,
    y: &'a [f64],
    params: &'a GrowParams,
    rng: &'a mut SplitMix64,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let s: f64 = rows.iter().map(|&i| self.y[i]).sum();
        s / (rows.len() as f64 + self.params.l2)
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&rows),
        });
        let msl = self.params.min_samples_leaf.max(1);
        if depth >= self.params.max_depth || rows.len() < 2 * msl {
            return id;
        }
        let Some((best, sorted)) = self.best_split(&rows) else {
            return id;
        };
        let (left_rows, right_rows) = sorted.split_at(best.pos);
        let (left_rows, right_rows) = (left_rows.to_vec(), right_rows.to_vec());
        drop(rows);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            left,
            right,
        };
        id
    }

    /// Best split over the candidate features; ties keep the lowest feature
    /// index, then the lowest threshold. Returns the rows sorted by the
    /// winning feature so the caller can cut them at `pos`.
    fn best_split(&mut self, rows: &[usize]) -> Option<(Candidate, Vec<usize>)> {
        let m = self.data.n_features();
        let features: Vec<usize> = match self.params.max_features {
            Some(k) if k < m => {
                let mut f = self.rng.sample_distinct(m, k);
                f.sort_unstable();
                f
            }
            _ => (0..m).collect(),
        };
        let msl = self.params.min_samples_leaf.max(1);
        let lambda = self.params.l2;
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let sum_sq: f64 = rows.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent = total * total / (n as f64 + lambda);
        let min_gain = 1e-12 * (1.0 + sum_sq);

        let mut best: Option<(Candidate, Vec<usize>)> = None;
        let mut sorted = rows.to_vec();
        for f in features {
            let col = &self.data.cols[f];
            sorted.copy_from_slice(rows);
            sorted.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            if col[sorted[0]] == col[sorted[n - 1]] {
                continue;
            }
            let mut left_sum = 0.0;
            let mut local: Option<Candidate> = None;
            for pos in 1..n {
                left_sum += self.y[sorted[pos - 1]];
                let (lo, hi) = (col[sorted[pos - 1]], col[sorted[pos]]);
                if pos < msl || n - pos < msl || lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / (pos as f64 + lambda)
                    + right_sum * right_sum / ((n - pos) as f64 + lambda)
                    - parent;
                if gain > min_gain && local.as_ref().is_none_or(|c| gain > c.gain) {
                    local = Some(Candidate {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        gain,
                        pos,
                    });
                }
            }
            if let Some(c) = local {
                if best.as_ref().is_none_or(|(b, _)| c.gain > b.gain) {
                    best = Some((c, sorted.clone()));
                }
            }
        }
        best
    }
}

/// Midpoint of `lo < hi` that still separates them under `x <= t`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}
