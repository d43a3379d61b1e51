//! Pipeline stages. Each stage reads its inputs as values, writes its
//! artifacts under the output directory and returns what later stages need.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use attrib_core::data::{clean, encode_categoricals, ingest_csv, read_csv, split, CleanLog, Dataset, Schema};
use attrib_core::metrics::{evaluate, format_table, EvaluationReport};
use attrib_core::models::{default_grid, fit, grid_search_cv, select_features_by_gain, GridSearch, ModelKind, PredictorSpec, TrainedModel};
use attrib_core::plots::{render_plot, AttributionMatrix, PlotData, PlotKind, PlotSpec};
use attrib_core::rng::SplitMix64;
use attrib_core::shapley::{attribute, attribute_rows, importance_from, Attribution, BackgroundSet, Method, EXACT_LIMIT};
use attrib_core::synth::{self, SynthConfig};
use attrib_core::{BundleMetadata, ModelBundle};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, PipelineConfig, MANIFEST_VERSION};

pub const DATA_CSV: &str = "data.csv";
pub const CLEAN_CSV: &str = "clean.csv";
pub const CLEAN_LOG: &str = "clean_log.json";
pub const SCHEMA_JSON: &str = "schema.json";
pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const FEATURES_JSON: &str = "features.json";
pub const TUNING_JSON: &str = "tuning.json";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const EVALUATION_TXT: &str = "evaluation.txt";
pub const BUNDLE_JSON: &str = "bundle.json";
pub const ATTRIBUTIONS_JSON: &str = "attributions.json";
pub const IMPORTANCE_JSON: &str = "global_importance.json";
pub const LOCAL_JSON: &str = "local_attribution.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const PLOTS_DIR: &str = "plots";

pub fn model_file(kind: ModelKind) -> String {
    format!("models/{}.json", kind.as_str())
}

/// Output directory that remembers every file written through it.
#[derive(Debug)]
pub struct Out {
    root: PathBuf,
    written: Vec<String>,
}

impl Out {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root, written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        log::debug!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let path = self.path(rel);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

pub fn synth_config(cfg: &PipelineConfig) -> Result<SynthConfig> {
    match &cfg.data {
        DataSource::Synth { n, seed, noise_sd } => {
            let mut s = SynthConfig::new(*n, seed.unwrap_or(cfg.seed));
            if let Some(sd) = noise_sd {
                s.noise_sd = *sd;
            }
            Ok(s)
        }
        DataSource::Csv { .. } => bail!("the data source is a CSV file, not the synthetic generator"),
    }
}

/// Generates the synthetic dataset and writes `data.csv`.
pub fn gen(cfg: &PipelineConfig, out: &mut Out) -> Result<Dataset> {
    let d = synth::generate(&synth_config(cfg)?);
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    out.write(DATA_CSV, &buf)?;
    Ok(d)
}

/// The raw dataset: generated for synth sources, ingested for CSV sources.
pub fn load_raw(cfg: &PipelineConfig, out: &mut Out) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synth { .. } => gen(cfg, out),
        DataSource::Csv { path, schema } => {
            let schema = Schema::load(schema).with_context(|| format!("loading schema {}", schema.display()))?;
            Ok(ingest_csv(path, &schema).with_context(|| format!("ingesting {}", path.display()))?)
        }
    }
}

fn csv_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    Ok(buf)
}

/// Cleans and one-hot encodes; writes `clean.csv`, `schema.json` and
/// `clean_log.json`.
pub fn clean_stage(cfg: &PipelineConfig, raw: &Dataset, out: &mut Out) -> Result<(Dataset, CleanLog)> {
    let (cleaned, log) = clean(raw, &cfg.clean);
    let encoded = encode_categoricals(&cleaned);
    if encoded.is_empty() {
        bail!("no rows left after cleaning ({} dropped)", log.total());
    }
    log::info!("clean: {} rows kept, {} dropped {:?}", encoded.len(), log.total(), log);
    out.write(CLEAN_CSV, &csv_bytes(&encoded)?)?;
    out.write_json(SCHEMA_JSON, &encoded.schema)?;
    out.write_json(CLEAN_LOG, &log)?;
    Ok((encoded, log))
}

/// Reads one of the encoded CSV artifacts back using `schema.json`.
pub fn load_encoded(out: &Out, rel: &str) -> Result<Dataset> {
    let schema: Schema = out.read_json(SCHEMA_JSON)?;
    let path = out.path(rel);
    let file = std::fs::File::open(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_csv(file, &schema)?)
}

pub fn split_stage(cfg: &PipelineConfig, data: &Dataset, out: &mut Out) -> Result<(Dataset, Dataset)> {
    let (train, test) = split(data, cfg.test_fraction, cfg.seed)?;
    log::info!("split: {} train / {} test", train.len(), test.len());
    out.write(TRAIN_CSV, &csv_bytes(&train)?)?;
    out.write(TEST_CSV, &csv_bytes(&test)?)?;
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub features: Vec<String>,
    pub searches: Vec<GridSearch>,
    pub models: Vec<TrainedModel>,
}

/// Optional gain-based feature selection, then grid search and a final fit
/// per roster entry. Writes `features.json`, `tuning.json` and one model
/// file per kind.
pub fn train_stage(cfg: &PipelineConfig, train: &Dataset, out: &mut Out) -> Result<TrainOutput> {
    let features = match &cfg.feature_selection {
        Some(fs) => {
            let picked = select_features_by_gain(train, fs.gain_threshold, cfg.seed)?;
            if picked.is_empty() {
                bail!("feature selection kept no features at threshold {}", fs.gain_threshold);
            }
            train
                .schema
                .feature_names()
                .into_iter()
                .filter(|f| picked.contains(f))
                .collect()
        }
        None => train.schema.feature_names(),
    };
    out.write_json(FEATURES_JSON, &features)?;
    let train = train.project(&features)?;

    let mut searches = Vec::new();
    let mut models = Vec::new();
    for entry in &cfg.models {
        let grid = entry.grid.clone().unwrap_or_else(|| default_grid(entry.kind));
        let t = Instant::now();
        let search = grid_search_cv(&train, entry.kind, &grid, cfg.cv_k, cfg.seed)
            .with_context(|| format!("grid search for {}", entry.kind))?;
        let model = fit(&train, &PredictorSpec::with_hyper(entry.kind, search.best.clone()), cfg.seed)
            .with_context(|| format!("fitting {}", entry.kind))?;
        log::info!(
            "train: {} best {} (cv mse {:.3}) in {:.2?}",
            entry.kind,
            search.best,
            search.table[search.best_index].mean_mse,
            t.elapsed()
        );
        out.write(&model_file(entry.kind), model.to_json()?.as_bytes())?;
        searches.push(search);
        models.push(model);
    }
    out.write_json(TUNING_JSON, &searches)?;
    Ok(TrainOutput { features, searches, models })
}

pub fn load_models(cfg: &PipelineConfig, out: &Out) -> Result<Vec<TrainedModel>> {
    cfg.models
        .iter()
        .map(|m| {
            let path = out.path(&model_file(m.kind));
            TrainedModel::load(&path).with_context(|| format!("loading {}", path.display()))
        })
        .collect()
}

/// One report per model, in the roster order of [`ModelKind::ALL`].
/// Writes `evaluation.json` and `evaluation.txt`.
pub fn evaluate_stage(models: &[TrainedModel], test: &Dataset, out: &mut Out) -> Result<Vec<EvaluationReport>> {
    let mut ordered: Vec<&TrainedModel> = models.iter().collect();
    ordered.sort_by_key(|m| ModelKind::ALL.iter().position(|k| *k == m.kind));
    let reports = ordered
        .into_iter()
        .map(|m| {
            let test = test.project(&m.feature_names())?;
            Ok(evaluate(m, &test, m.kind.label())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = format_table(&reports);
    log::info!("evaluation:\n{table}");
    out.write_json(EVALUATION_JSON, &reports)?;
    out.write(EVALUATION_TXT, table.as_bytes())?;
    Ok(reports)
}

/// Lowest test MSE among non-dummy models, first in roster order on ties.
pub fn select_model<'a>(
    models: &'a [TrainedModel],
    reports: &'a [EvaluationReport],
) -> Result<(&'a TrainedModel, &'a EvaluationReport)> {
    let mut best: Option<(&TrainedModel, &EvaluationReport)> = None;
    for m in models.iter().filter(|m| !m.kind.is_dummy()) {
        let r = reports
            .iter()
            .find(|r| r.model == m.kind.label())
            .ok_or_else(|| anyhow!("no evaluation for {}", m.kind))?;
        if best.is_none_or(|(_, b)| r.mse < b.mse) {
            best = Some((m, r));
        }
    }
    best.ok_or_else(|| anyhow!("the roster has no non-dummy model to explain"))
}

/// Attributions in a stable, schema-ordered layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionTable {
    pub features: Vec<String>,
    pub method: Method,
    /// Training-set row of each attribution.
    pub rows: Vec<usize>,
    pub base_values: Vec<f64>,
    pub predictions: Vec<f64>,
    pub instances: Vec<Vec<f64>>,
    pub contributions: Vec<Vec<f64>>,
}

impl AttributionTable {
    pub fn new(rows: Vec<usize>, attrs: &[Attribution]) -> Result<Self> {
        let first = attrs.first().ok_or_else(|| anyhow!("no attributions"))?;
        Ok(Self {
            features: first.features.clone(),
            method: first.method,
            rows,
            base_values: attrs.iter().map(|a| a.base_value).collect(),
            predictions: attrs.iter().map(|a| a.prediction).collect(),
            instances: attrs.iter().map(|a| a.instance.clone()).collect(),
            contributions: attrs.iter().map(|a| a.contributions.clone()).collect(),
        })
    }

    pub fn attributions(&self) -> Vec<Attribution> {
        (0..self.rows.len())
            .map(|i| Attribution {
                features: self.features.clone(),
                instance: self.instances[i].clone(),
                base_value: self.base_values[i],
                contributions: self.contributions[i].clone(),
                prediction: self.predictions[i],
                method: self.method,
            })
            .collect()
    }

    pub fn matrix(&self) -> Result<AttributionMatrix> {
        Ok(AttributionMatrix::new(self.attributions())?)
    }
}

#[derive(Debug, Clone)]
pub struct GlobalOutput {
    pub bundle: ModelBundle,
    pub table: AttributionTable,
}

fn exact_guard(method: Method, m: usize) -> Result<()> {
    if method == Method::Exact && m > EXACT_LIMIT {
        bail!("exact attribution supports at most {EXACT_LIMIT} features, the model has {m}; rerun with --method sampled");
    }
    Ok(())
}

/// Background sampling, attributions over (a seeded sample of) the training
/// rows and the model bundle. Writes `bundle.json`, `attributions.json` and
/// `global_importance.json`.
pub fn explain_global_stage(
    cfg: &PipelineConfig,
    model: &TrainedModel,
    report: &EvaluationReport,
    train: &Dataset,
    out: &mut Out,
) -> Result<GlobalOutput> {
    let method = cfg.method();
    exact_guard(method, model.n_features())?;
    let (x, _) = train.project(&model.feature_names())?.to_matrix()?;
    let bg = BackgroundSet::sample(model.feature_names(), &x, cfg.shapley.background_size, cfg.seed)?;
    let rows: Vec<usize> = match cfg.shapley.explain_rows {
        Some(k) if k < x.len() => {
            let mut idx = SplitMix64::new(explain_seed(cfg.seed)).sample_distinct(x.len(), k);
            idx.sort_unstable();
            idx
        }
        _ => (0..x.len()).collect(),
    };
    let instances: Vec<Vec<f64>> = rows.iter().map(|&i| x[i].clone()).collect();
    let t = Instant::now();
    let attrs = attribute_rows(model, &instances, &bg, method)?;
    log::info!(
        "explain: {} rows x {} features, background {}, {:?} in {:.2?}",
        rows.len(),
        model.n_features(),
        bg.len(),
        method,
        t.elapsed()
    );
    if method == Method::Exact {
        if let Some(a) = attrs.iter().find(|a| a.efficiency_gap() > 1e-6 * a.prediction.abs().max(1.0)) {
            bail!("attribution does not sum to the prediction (gap {})", a.efficiency_gap());
        }
    }
    let importance = importance_from(&attrs)?;
    let metadata = BundleMetadata {
        label: cfg.label.clone().unwrap_or_else(|| model.kind.as_str().to_string()),
        train_date: cfg.train_date.clone(),
        seed: cfg.seed,
        unit: cfg.unit.clone(),
        evaluation: Some(report.clone()),
    };
    let bundle = ModelBundle::new(model.clone(), bg, importance, metadata)?;
    let table = AttributionTable::new(rows, &attrs)?;
    out.write(BUNDLE_JSON, bundle.to_json()?.as_bytes())?;
    out.write_json(ATTRIBUTIONS_JSON, &table)?;
    out.write_json(IMPORTANCE_JSON, &bundle.global_importance)?;
    Ok(GlobalOutput { bundle, table })
}

pub fn explain_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

/// Plots drawn when the config does not list any.
pub fn default_plots(bundle: &ModelBundle) -> Vec<PlotSpec> {
    let mut specs: Vec<PlotSpec> = [
        PlotKind::SummaryBar,
        PlotKind::Beeswarm,
        PlotKind::Decision,
        PlotKind::Heatmap,
        PlotKind::Force,
        PlotKind::Histogram,
    ]
    .into_iter()
    .map(PlotSpec::new)
    .collect();
    if let [first, second, ..] = bundle.global_importance.as_slice() {
        specs.push(PlotSpec::dependence(&first.feature, &second.feature));
    }
    specs
}

/// Renders every configured plot to `plots/<kind>_<label>.svg`.
pub fn plot_stage(
    cfg: &PipelineConfig,
    bundle: &ModelBundle,
    table: &AttributionTable,
    data: &Dataset,
    out: &mut Out,
) -> Result<Vec<String>> {
    let matrix = table.matrix()?;
    let label = &bundle.metadata.label;
    let specs = cfg.plots.clone().unwrap_or_else(|| default_plots(bundle));
    let mut files = Vec::new();
    for mut spec in specs {
        if let Some(k) = cfg.top_k {
            spec.top_k = k;
        }
        let (svg, name) = match spec.kind {
            PlotKind::Force => {
                let a = matrix.rows.first().ok_or_else(|| anyhow!("no attributions to plot"))?;
                let name = format!("{label}_row{}", table.rows[0]);
                (render_plot(&spec, PlotData::Local(a))?, name)
            }
            PlotKind::Histogram => (render_plot(&spec, PlotData::Dataset(data))?, label.clone()),
            PlotKind::Dependence => {
                let name = format!("{label}_{}", spec.feature.as_deref().unwrap_or_default());
                (render_plot(&spec, PlotData::Matrix(&matrix))?, name)
            }
            _ => (render_plot(&spec, PlotData::Matrix(&matrix))?, label.clone()),
        };
        let rel = format!("{PLOTS_DIR}/{}", spec.file_name(&sanitize(&name)));
        out.write(&rel, svg.as_bytes())?;
        files.push(rel);
    }
    log::info!("plot: {} files", files.len());
    Ok(files)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '-' })
        .collect()
}

/// Accepts `{name: value}` or `{"features": {name: value}}`.
pub fn parse_instance(v: &Value) -> Result<BTreeMap<String, Value>> {
    let obj = v.as_object().ok_or_else(|| anyhow!("instance must be a JSON object"))?;
    let record = match obj.get("features") {
        Some(Value::Object(inner)) if obj.len() == 1 => inner,
        _ => obj,
    };
    Ok(record.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
}

/// Prediction, attribution and force plot for one record. Writes
/// `local_attribution.json` and `plots/force_local.svg`.
pub fn explain_local(
    bundle: &ModelBundle,
    instance: &Value,
    method: Method,
    top_k: Option<usize>,
    out: &mut Out,
) -> Result<Attribution> {
    let record = parse_instance(instance)?;
    let row = attrib_server::record_to_row(bundle, &record).map_err(|e| anyhow!("instance does not match the bundle schema: {e}"))?;
    exact_guard(method, bundle.n_features())?;
    let attr = attribute(&bundle.model, &row, &bundle.background, method)?;
    let prediction = bundle.model.predict(&row)?;
    if method == Method::Exact && (attr.base_value + attr.contributions.iter().sum::<f64>() - prediction).abs() > 1e-6 * prediction.abs().max(1.0) {
        bail!("attribution does not sum to the prediction");
    }
    let grouped = attrib_core::shapley::group_attribution(&attr, &bundle.schema)?;
    let mut spec = PlotSpec::new(PlotKind::Force);
    if let Some(k) = top_k {
        spec.top_k = k;
    }
    out.write_json(LOCAL_JSON, &attr)?;
    out.write(&format!("{PLOTS_DIR}/{}", spec.file_name("local")), render_plot(&spec, PlotData::Local(&grouped))?.as_bytes())?;
    Ok(attr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: BTreeMap<String, String>,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub counts: BTreeMap<String, usize>,
    pub selected_model: String,
    pub timings_ms: BTreeMap<String, u128>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn checksum(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub reports: Vec<EvaluationReport>,
    pub bundle: ModelBundle,
    pub plots: Vec<String>,
    pub manifest: Manifest,
}

fn timed<T>(timings: &mut BTreeMap<String, u128>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let r = f().with_context(|| format!("stage `{stage}` failed"));
    timings.insert(stage.to_string(), t.elapsed().as_millis());
    r
}

/// The whole methodology end to end, then `manifest.json` with a checksum
/// for every other file written.
pub fn run_pipeline(cfg: &PipelineConfig, out: &mut Out) -> Result<RunArtifacts> {
    let mut timings = BTreeMap::new();
    let raw = timed(&mut timings, "data", || load_raw(cfg, out))?;
    let (cleaned, clean_log) = timed(&mut timings, "clean", || clean_stage(cfg, &raw, out))?;
    let (train, test) = timed(&mut timings, "split", || split_stage(cfg, &cleaned, out))?;
    let trained = timed(&mut timings, "train", || train_stage(cfg, &train, out))?;
    let reports = timed(&mut timings, "evaluate", || evaluate_stage(&trained.models, &test, out))?;
    let global = timed(&mut timings, "explain", || {
        let (model, report) = select_model(&trained.models, &reports)?;
        log::info!("explain: selected {} (test mse {:.3})", model.kind, report.mse);
        explain_global_stage(cfg, model, report, &train, out)
    })?;
    let plots = timed(&mut timings, "plot", || plot_stage(cfg, &global.bundle, &global.table, &cleaned, out))?;

    let mut artifacts = out
        .written()
        .iter()
        .map(|rel| {
            let (sha256, bytes) = checksum(&out.path(rel))?;
            Ok(ArtifactEntry { path: rel.clone(), sha256, bytes })
        })
        .collect::<Result<Vec<_>>>()?;
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));

    let mut seeds = BTreeMap::new();
    seeds.insert("pipeline".into(), cfg.seed);
    if let Ok(s) = synth_config(cfg) {
        seeds.insert("synth".into(), s.seed);
    }
    for stage in ["split", "cv", "fit", "background", "feature_selection"] {
        seeds.insert(stage.into(), cfg.seed);
    }
    seeds.insert("explain_rows".into(), explain_seed(cfg.seed));
    if let Method::Sampled { seed, .. } = cfg.method() {
        seeds.insert("sampled_shapley".into(), seed);
    }
    let counts: BTreeMap<String, usize> = [
        ("raw_rows", raw.len()),
        ("missing_dropped", clean_log.missing_dropped),
        ("duplicates_dropped", clean_log.duplicates_dropped),
        ("outliers_dropped", clean_log.outliers_dropped),
        ("clean_rows", cleaned.len()),
        ("train_rows", train.len()),
        ("test_rows", test.len()),
        ("features", trained.features.len()),
        ("models", trained.models.len()),
        ("background_rows", global.bundle.background.len()),
        ("explained_rows", global.table.rows.len()),
        ("plots", plots.len()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let tool = [
        ("name".to_string(), "attrib".to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ]
    .into_iter()
    .collect();
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool,
        config: cfg.clone(),
        seeds,
        counts,
        selected_model: global.bundle.model.kind.as_str().to_string(),
        timings_ms: timings,
        artifacts,
    };
    out.write_json(MANIFEST_JSON, &manifest)?;
    Ok(RunArtifacts { reports, bundle: global.bundle, plots, manifest })
}
