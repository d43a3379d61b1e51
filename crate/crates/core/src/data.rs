//! Tabular datasets: schema, CSV ingestion, cleansing, splitting and fold
//! assignment, one-hot encoding.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown level `{value}` in categorical column `{column}` at row {row_index}")]
    UnknownCategoryLevel {
        column: String,
        value: String,
        row_index: usize,
    },
    #[error("file is empty")]
    EmptyFile,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("k = {k} is invalid for {n} rows (need 2 <= k <= n)")]
    InvalidK { k: usize, n: usize },
    #[error("feature `{0}` is not numeric; encode categoricals first")]
    NonNumericFeature(String),
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("row {row} has {got} cells, schema has {expected}")]
    RowWidth {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    /// Source feature a one-hot column was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            group: None,
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Binary,
            group: None,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
            group: None,
        }
    }

    pub fn is_numeric_like(&self) -> bool {
        !matches!(self.kind, FeatureKind::Categorical { .. })
    }

    /// Name of the source feature: the group when set, else the column name.
    pub fn source_name(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub target: String,
}

#[derive(Deserialize)]
struct RawSchema {
    features: Vec<FeatureSpec>,
    target: String,
}

impl TryFrom<RawSchema> for Schema {
    type Error = DataError;

    fn try_from(raw: RawSchema) -> Result<Self> {
        Schema::new(raw.features, raw.target)
    }
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>, target: impl Into<String>) -> Result<Self> {
        let target = target.into();
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::InvalidSchema(format!(
                    "duplicate feature `{}`",
                    f.name
                )));
            }
            if let FeatureKind::Categorical { levels } = &f.kind {
                if levels.is_empty() {
                    return Err(DataError::InvalidSchema(format!(
                        "categorical `{}` has no levels",
                        f.name
                    )));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(DataError::InvalidSchema(format!(
                        "categorical `{}` has repeated levels",
                        f.name
                    )));
                }
            }
        }
        if seen.contains(target.as_str()) {
            return Err(DataError::InvalidSchema(format!(
                "target `{target}` is also a feature"
            )));
        }
        Ok(Self { features, target })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn has_categoricals(&self) -> bool {
        self.features.iter().any(|f| !f.is_numeric_like())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Level(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Level(_) => None,
        }
    }
}

/// `None` marks a missing cell.
pub type Cell = Option<Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub features: Vec<Cell>,
    pub target: Option<f64>,
}

impl Row {
    pub fn numeric(features: &[f64], target: f64) -> Self {
        Self {
            features: features.iter().map(|&x| Some(Value::Number(x))).collect(),
            target: Some(target),
        }
    }

    fn has_missing(&self) -> bool {
        let bad_number = |x: f64| !x.is_finite();
        self.target.is_none_or(bad_number)
            || self.features.iter().any(|c| match c {
                None => true,
                Some(Value::Number(x)) => bad_number(*x),
                Some(Value::Level(_)) => false,
            })
    }

    fn key(&self) -> Vec<CellKey> {
        let num = |x: f64| CellKey::Number(if x == 0.0 { 0 } else { x.to_bits() });
        self.features
            .iter()
            .map(|c| match c {
                None => CellKey::Missing,
                Some(Value::Number(x)) => num(*x),
                Some(Value::Level(s)) => CellKey::Level(s.clone()),
            })
            .chain(std::iter::once(
                self.target.map_or(CellKey::Missing, num),
            ))
            .collect()
    }
}

#[derive(Hash, PartialEq, Eq)]
enum CellKey {
    Missing,
    Number(u64),
    Level(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Row>,
    #[serde(default)]
    pub provenance: String,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<Row>, provenance: impl Into<String>) -> Result<Self> {
        let m = schema.len();
        for (i, r) in rows.iter().enumerate() {
            if r.features.len() != m {
                return Err(DataError::RowWidth {
                    row: i,
                    got: r.features.len(),
                    expected: m,
                });
            }
        }
        Ok(Self {
            schema,
            rows,
            provenance: provenance.into(),
        })
    }

    /// Builds a dataset of numeric features from a row-major matrix.
    pub fn from_matrix(
        names: &[&str],
        x: &[Vec<f64>],
        y: &[f64],
        target: &str,
    ) -> Result<Self> {
        let schema = Schema::new(
            names.iter().map(|n| FeatureSpec::numeric(*n)).collect(),
            target,
        )?;
        let rows = x
            .iter()
            .zip(y)
            .map(|(xr, &t)| Row::numeric(xr, t))
            .collect();
        Dataset::new(schema, rows, "matrix")
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Keeps only the named features, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| {
                self.schema
                    .index_of(n)
                    .ok_or_else(|| DataError::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let schema = Schema::new(
            idx.iter().map(|&i| self.schema.features[i].clone()).collect(),
            self.schema.target.clone(),
        )?;
        let rows = self
            .rows
            .iter()
            .map(|r| Row {
                features: idx.iter().map(|&i| r.features[i].clone()).collect(),
                target: r.target,
            })
            .collect();
        Ok(Dataset {
            schema,
            rows,
            provenance: self.provenance.clone(),
        })
    }

    /// Row-major feature matrix and target vector. Every feature must be
    /// numeric or binary and every cell present.
    pub fn to_matrix(&self) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        if let Some(f) = self.schema.features.iter().find(|f| !f.is_numeric_like()) {
            return Err(DataError::NonNumericFeature(f.name.clone()));
        }
        let mut x = Vec::with_capacity(self.len());
        let mut y = Vec::with_capacity(self.len());
        for (ri, row) in self.rows.iter().enumerate() {
            let xr = row
                .features
                .iter()
                .zip(&self.schema.features)
                .map(|(c, spec)| match c {
                    Some(Value::Number(v)) if v.is_finite() => Ok(*v),
                    _ => Err(DataError::MissingValue {
                        column: spec.name.clone(),
                        row: ri,
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            let t = row
                .target
                .filter(|t| t.is_finite())
                .ok_or_else(|| DataError::MissingValue {
                    column: self.schema.target.clone(),
                    row: ri,
                })?;
            x.push(xr);
            y.push(t);
        }
        Ok((x, y))
    }

    pub fn targets(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.target).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.target);
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row
                .features
                .iter()
                .map(|c| match c {
                    None => String::new(),
                    Some(Value::Number(x)) => format!("{x}"),
                    Some(Value::Level(s)) => s.clone(),
                })
                .collect();
            rec.push(row.target.map(|t| format!("{t}")).unwrap_or_default());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Reads a CSV file against `schema`.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)?;
    let mut ds = read_csv(std::io::BufReader::new(f), schema)?;
    ds.provenance = format!("csv:{}", path.display());
    Ok(ds)
}

/// Reads CSV from any reader. Missing or unparseable numeric cells become
/// missing cells; rows are kept in file order.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::EmptyFile);
    }
    let col: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let find = |name: &str| {
        col.get(name)
            .copied()
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| find(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let target_col = find(&schema.target)?;

    let mut rows = Vec::new();
    for (ri, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let features = schema
            .features
            .iter()
            .zip(&feature_cols)
            .map(|(spec, &c)| parse_cell(spec, get(c), ri))
            .collect::<Result<Vec<_>>>()?;
        let target = parse_number(get(target_col));
        rows.push(Row { features, target });
    }
    Dataset::new(schema.clone(), rows, "csv")
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_cell(spec: &FeatureSpec, raw: &str, row_index: usize) -> Result<Cell> {
    if raw.is_empty() {
        return Ok(None);
    }
    Ok(match &spec.kind {
        FeatureKind::Numeric => parse_number(raw).map(Value::Number),
        FeatureKind::Binary => parse_number(raw)
            .filter(|&x| x == 0.0 || x == 1.0)
            .map(Value::Number),
        FeatureKind::Categorical { levels } => {
            if !levels.iter().any(|l| l == raw) {
                return Err(DataError::UnknownCategoryLevel {
                    column: spec.name.clone(),
                    value: raw.to_string(),
                    row_index,
                });
            }
            Some(Value::Level(raw.to_string()))
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanPolicy {
    #[serde(default)]
    pub drop_missing: bool,
    #[serde(default)]
    pub drop_duplicates: bool,
    #[serde(default)]
    pub target_upper_bound: Option<f64>,
}

impl CleanPolicy {
    pub fn strict(target_upper_bound: Option<f64>) -> Self {
        Self {
            drop_missing: true,
            drop_duplicates: true,
            target_upper_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanLog {
    pub missing_dropped: usize,
    pub duplicates_dropped: usize,
    pub outliers_dropped: usize,
}

impl CleanLog {
    pub fn total(&self) -> usize {
        self.missing_dropped + self.duplicates_dropped + self.outliers_dropped
    }
}

/// Drops rows with missing cells, then exact duplicates (first occurrence
/// kept), then rows whose target exceeds the upper bound.
pub fn clean(ds: &Dataset, policy: &CleanPolicy) -> (Dataset, CleanLog) {
    let mut log = CleanLog::default();
    let mut rows: Vec<&Row> = ds.rows.iter().collect();

    if policy.drop_missing {
        let before = rows.len();
        rows.retain(|r| !r.has_missing());
        log.missing_dropped = before - rows.len();
    }
    if policy.drop_duplicates {
        let before = rows.len();
        let mut seen = HashSet::new();
        rows.retain(|r| seen.insert(r.key()));
        log.duplicates_dropped = before - rows.len();
    }
    if let Some(bound) = policy.target_upper_bound {
        let before = rows.len();
        rows.retain(|r| r.target.is_none_or(|t| t <= bound));
        log.outliers_dropped = before - rows.len();
    }
    let out = Dataset {
        schema: ds.schema.clone(),
        rows: rows.into_iter().cloned().collect(),
        provenance: ds.provenance.clone(),
    };
    (out, log)
}

/// Seeded train/test partition. Test size is `round(test_fraction * N)`;
/// both partitions keep the original row order.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::InvalidFraction(test_fraction));
    }
    let n = ds.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n < 2 || n_test < 1 || n_test >= n {
        return Err(DataError::DatasetTooSmall(format!(
            "{n} rows cannot be split with test fraction {test_fraction}"
        )));
    }
    let (train_idx, test_idx) = split_indices(n, n_test, seed);
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

/// The first `n_test` entries of a seeded permutation form the test set.
pub fn split_indices(n: usize, n_test: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let perm = SplitMix64::new(seed).permutation(n);
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Vec<usize>>,
    pub n: usize,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// All indices outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut held = vec![false; self.n];
        for &i in &self.folds[f] {
            held[i] = true;
        }
        (0..self.n).filter(|&i| !held[i]).collect()
    }
}

pub fn kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    kfold_indices(ds.len(), k, seed)
}

/// Seeded shuffle, then contiguous chunks; the first `n % k` folds get one
/// extra index. Indices within a fold are ascending.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(DataError::InvalidK { k, n });
    }
    let perm = SplitMix64::new(seed).permutation(n);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = perm[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldAssignment { folds, n })
}

/// Replaces each categorical column with one binary column per level,
/// named `<name>=<level>` and grouped under `<name>`.
pub fn encode_categoricals(ds: &Dataset) -> Dataset {
    if !ds.schema.has_categoricals() {
        return ds.clone();
    }
    let mut features = Vec::new();
    for f in &ds.schema.features {
        match &f.kind {
            FeatureKind::Categorical { levels } => {
                for level in levels {
                    features.push(FeatureSpec {
                        name: format!("{}={}", f.name, level),
                        kind: FeatureKind::Binary,
                        group: Some(f.name.clone()),
                    });
                }
            }
            _ => features.push(f.clone()),
        }
    }
    let rows = ds
        .rows
        .iter()
        .map(|row| {
            let mut cells = Vec::with_capacity(features.len());
            for (cell, spec) in row.features.iter().zip(&ds.schema.features) {
                match &spec.kind {
                    FeatureKind::Categorical { levels } => {
                        for level in levels {
                            cells.push(match cell {
                                Some(Value::Level(s)) => {
                                    Some(Value::Number(if s == level { 1.0 } else { 0.0 }))
                                }
                                _ => None,
                            });
                        }
                    }
                    _ => cells.push(cell.clone()),
                }
            }
            Row {
                features: cells,
                target: row.target,
            }
        })
        .collect();
    Dataset {
        // Only fails if a `<name>=<level>` column collides with an existing name.
        schema: Schema::new(features, ds.schema.target.clone())
            .unwrap_or_else(|e| panic!("one-hot encoding produced an invalid schema: {e}")),
        rows,
        provenance: ds.provenance.clone(),
    }
}
