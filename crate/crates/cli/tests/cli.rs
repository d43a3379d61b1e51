use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use attrib_core::models::{fit, Hyperparameters, ModelKind, PredictorSpec, N_TREES};
use attrib_core::shapley::BackgroundSet;
use attrib_core::synth::{generate, SynthConfig};
use attrib_core::{BundleMetadata, Dataset, ModelBundle};
use serde_json::{json, Value};

fn attrib(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrib"))
        .current_dir(dir)
        .args(args)
        .env("ATTRIB_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config() -> Value {
    json!({
        "seed": 5,
        "data": {"synth": {"n": 300}},
        "cv_k": 3,
        "models": [
            "dummy_mean",
            "linear",
            {"kind": "gbt", "grid": [{"n_trees": 20, "max_depth": 3}, {"n_trees": 20, "max_depth": 4}]}
        ],
        "shapley": {"background_size": 20, "explain_rows": 30},
        "top_k": 4
    })
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn tree(root: &Path) -> Vec<String> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                found.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    found.sort();
    found
}

fn record(bundle: &ModelBundle, row: &[f64]) -> Value {
    let obj: serde_json::Map<String, Value> = bundle
        .schema
        .feature_names()
        .into_iter()
        .zip(row.iter().map(|v| json!(v)))
        .collect();
    Value::Object(obj)
}

fn local(dir: &Path, bundle: &ModelBundle, instance: &Value) -> (Output, Option<Value>) {
    bundle.save(dir.join("bundle.json")).unwrap();
    write_json(&dir.join("instance.json"), instance);
    let o = attrib(dir, &["--out", "o", "explain", "local", "--instance", "instance.json", "--bundle", "bundle.json"]);
    let written = std::fs::read_to_string(dir.join("o/local_attribution.json")).ok();
    (o, written.map(|t| serde_json::from_str(&t).unwrap()))
}

fn phis(attr: &Value) -> Vec<f64> {
    attr["contributions"].as_array().unwrap().iter().map(|c| c["phi"].as_f64().unwrap()).collect()
}

#[test]
fn run_keeps_every_output_under_the_out_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["out"] = json!("result");
    write_json(&dir.path().join("config.json"), &cfg);
    let o = attrib(dir.path(), &["--config", "config.json", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Gradient boosting") && stdout.contains("Dummy (mean)"));
    let mut top: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["config.json", "result"]);
    let files = tree(&dir.path().join("result"));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("result/manifest.json")).unwrap()).unwrap();
    let beeswarm = format!("plots/beeswarm_{}.svg", manifest["selected_model"].as_str().unwrap());
    for expected in ["bundle.json", "evaluation.json", beeswarm.as_str()] {
        assert!(files.iter().any(|f| f == expected), "{expected} missing from {files:?}");
    }
}

#[test]
fn stage_subcommands_reproduce_run() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("config.json"), &small_config());
    let o = attrib(dir.path(), &["--config", "config.json", "--out", "whole", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for stage in [&["gen"][..], &["clean"], &["split"], &["train"], &["evaluate"], &["explain", "global"], &["plot"]] {
        let mut args = vec!["--config", "config.json", "--out", "staged"];
        args.extend_from_slice(stage);
        let o = attrib(dir.path(), &args);
        assert!(o.status.success(), "{stage:?}: {}", stderr(&o));
    }
    let whole: Vec<String> = tree(&dir.path().join("whole")).into_iter().filter(|f| f != "manifest.json").collect();
    assert_eq!(whole, tree(&dir.path().join("staged")));
    for f in &whole {
        let a = std::fs::read(dir.path().join("whole").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("staged").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn missing_seed_is_a_config_error_naming_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.as_object_mut().unwrap().remove("seed");
    write_json(&dir.path().join("c.json"), &cfg);
    let o = attrib(dir.path(), &["--config", "c.json", "--out", "o", "run"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("config error in `seed`"), "{}", stderr(&o));
    assert!(!dir.path().join("o/manifest.json").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["test_fration"] = json!(0.2);
    write_json(&dir.path().join("c.json"), &cfg);
    let o = attrib(dir.path(), &["--config", "c.json", "--out", "o", "gen"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`test_fration`"), "{}", stderr(&o));
}

#[test]
fn failing_stage_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("c.json"), &small_config());
    let o = attrib(dir.path(), &["--config", "c.json", "--out", "empty", "evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("stage `evaluate` failed"), "{}", stderr(&o));
}

#[test]
fn seed_flag_overrides_config_and_lands_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("c.json"), &small_config());
    let o = attrib(dir.path(), &["--config", "c.json", "--out", "o", "--seed", "9", "--method", "sampled", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], json!(9));
    assert_eq!(manifest["config"]["shapley"]["method"], json!("sampled"));
    assert_eq!(manifest["seeds"]["split"], json!(9));
}

#[test]
fn info_logging_is_silenced_at_warn() {
    let dir = tempfile::tempdir().unwrap();
    write_json(&dir.path().join("c.json"), &small_config());
    let o = attrib(dir.path(), &["--config", "c.json", "--out", "o", "gen"]);
    assert!(o.status.success());
    assert_eq!(stderr(&o), "");
}

fn synth_gbt_bundle(bg_rows: usize) -> (ModelBundle, Vec<Vec<f64>>) {
    let d = generate(&SynthConfig::new(300, 12));
    let spec = PredictorSpec::with_hyper(ModelKind::Gbt, Hyperparameters::new().with(N_TREES, 25.0));
    let m = fit(&d, &spec, 0).unwrap();
    let (x, _) = d.to_matrix().unwrap();
    let bg = BackgroundSet::sample(m.feature_names(), &x, bg_rows, 3).unwrap();
    (ModelBundle::new(m, bg, Vec::new(), BundleMetadata::default()).unwrap(), x)
}

#[test]
fn local_instance_equal_to_the_only_background_row_has_zero_attribution() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = synth_gbt_bundle(1);
    let row = bundle.background.rows[0].clone();
    let (o, attr) = local(dir.path(), &bundle, &record(&bundle, &row));
    assert!(o.status.success(), "{}", stderr(&o));
    let attr = attr.unwrap();
    assert!(phis(&attr).iter().all(|p| *p == 0.0), "{attr}");
    assert_eq!(attr["prediction"], attr["base_value"]);
    let svg = std::fs::read_to_string(dir.path().join("o/plots/force_local.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();
}

#[test]
fn local_dummy_mean_bundle_has_zero_phi_and_train_mean_base() {
    let dir = tempfile::tempdir().unwrap();
    let x: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64, (i * i % 5) as f64]).collect();
    let y: Vec<f64> = (0..9).map(|i| 2.0 + 0.5 * i as f64).collect();
    let train_mean = y.iter().sum::<f64>() / y.len() as f64;
    let d = Dataset::from_matrix(&["a", "b"], &x, &y, "y").unwrap();
    let m = fit(&d, &PredictorSpec::new(ModelKind::DummyMean), 0).unwrap();
    let bg = BackgroundSet::sample(m.feature_names(), &x, 4, 1).unwrap();
    let bundle = ModelBundle::new(m, bg, Vec::new(), BundleMetadata::default()).unwrap();
    let (o, attr) = local(dir.path(), &bundle, &json!({"features": {"a": 100.0, "b": -3.0}}));
    assert!(o.status.success(), "{}", stderr(&o));
    let attr = attr.unwrap();
    assert!(phis(&attr).iter().all(|p| *p == 0.0));
    assert!((attr["base_value"].as_f64().unwrap() - train_mean).abs() <= 1e-12);
}

#[test]
fn local_gbt_attribution_sums_to_an_independent_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, x) = synth_gbt_bundle(25);
    let row = &x[123];
    let (o, attr) = local(dir.path(), &bundle, &record(&bundle, row));
    assert!(o.status.success(), "{}", stderr(&o));
    let attr = attr.unwrap();
    let fx = bundle.model.predict(row).unwrap();
    let gap = (attr["base_value"].as_f64().unwrap() + phis(&attr).iter().sum::<f64>() - fx).abs();
    assert!(gap <= 1e-6 * fx.abs().max(1.0), "gap {gap}");
}

#[test]
fn local_unknown_feature_fails_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, x) = synth_gbt_bundle(5);
    let mut rec = record(&bundle, &x[0]);
    rec["bogus"] = json!(1.0);
    let (o, attr) = local(dir.path(), &bundle, &rec);
    assert!(!o.status.success());
    assert!(attr.is_none());
    assert!(stderr(&o).contains("stage `explain local` failed"), "{}", stderr(&o));
}

#[test]
fn serve_subcommand_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, x) = synth_gbt_bundle(10);
    bundle.save(dir.path().join("bundle.json")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_attrib"))
        .current_dir(dir.path())
        .args(["serve", "--bundle", "bundle.json", "--port", "0"])
        .env("ATTRIB_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(at) = line.find("http://") {
            break line[at..].trim().to_string();
        }
    };
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let (health, predicted) = runtime.block_on(async {
        let c = reqwest::Client::new();
        let health: Value = c.get(format!("{addr}/healthz")).send().await.unwrap().json().await.unwrap();
        let predicted: Value = c
            .post(format!("{addr}/predict"))
            .json(&json!({"features": record(&bundle, &x[4])}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        (health, predicted)
    });
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health, json!({"status": "ok"}));
    assert_eq!(predicted["prediction"].as_f64().unwrap(), bundle.model.predict(&x[4]).unwrap());
}
