use std::sync::Arc;

use attrib_core::data::{encode_categoricals, Dataset, FeatureSpec, Row, Schema, Value as Cell};
use attrib_core::models::{fit, Hyperparameters, ModelKind, PredictorSpec, N_TREES};
use attrib_core::shapley::{global_importance, BackgroundSet, Method};
use attrib_core::synth::{generate, SynthConfig};
use attrib_core::{BundleMetadata, ModelBundle};
use attrib_server::router;
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn bundle_for(d: &Dataset, spec: PredictorSpec, label: &str) -> ModelBundle {
    let m = fit(d, &spec, 0).unwrap();
    let (x, _) = d.to_matrix().unwrap();
    let bg = BackgroundSet::sample(m.feature_names(), &x, 20, 1).unwrap();
    let imp = global_importance(&m, &d.select(&(0..10).collect::<Vec<_>>()), &bg, Method::Exact).unwrap();
    ModelBundle::new(m, bg, imp, BundleMetadata { label: label.into(), ..Default::default() }).unwrap()
}

fn dummy_bundle() -> ModelBundle {
    let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i % 2) as f64, 1.0]).collect();
    let y: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 1.0 } else { 3.0 }).collect();
    let d = Dataset::from_matrix(&["a", "b", "c"], &x, &y, "y").unwrap();
    bundle_for(&d, PredictorSpec::new(ModelKind::DummyMean), "dummy_mean")
}

fn gbt_bundle() -> ModelBundle {
    let d = generate(&SynthConfig::new(300, 4));
    let spec = PredictorSpec::with_hyper(ModelKind::Gbt, Hyperparameters::new().with(N_TREES, 30.0));
    bundle_for(&d, spec, "gbt")
}

fn wide_bundle(m: usize) -> ModelBundle {
    let names: Vec<String> = (0..m).map(|i| format!("f{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let x: Vec<Vec<f64>> = (0..40).map(|r| (0..m).map(|c| ((r * 7 + c * 3) % 11) as f64).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| r.iter().sum()).collect();
    let d = Dataset::from_matrix(&refs, &x, &y, "y").unwrap();
    let model = fit(&d, &PredictorSpec::new(ModelKind::Linear), 0).unwrap();
    let bg = BackgroundSet::sample(names, &x, 5, 0).unwrap();
    ModelBundle::new(model, bg, Vec::new(), BundleMetadata::default()).unwrap()
}

fn categorical_bundle() -> ModelBundle {
    let schema = Schema::new(
        vec![FeatureSpec::numeric("size"), FeatureSpec::categorical("room", ["shared", "private", "entire"])],
        "price",
    )
    .unwrap();
    let levels = ["shared", "private", "entire"];
    let rows = (0..30)
        .map(|i| Row {
            features: vec![Some(Cell::Number(i as f64)), Some(Cell::Level(levels[i % 3].into()))],
            target: Some(i as f64 + 10.0 * (i % 3) as f64),
        })
        .collect();
    let d = encode_categoricals(&Dataset::new(schema, rows, "t").unwrap());
    bundle_for(&d, PredictorSpec::new(ModelKind::Linear), "linear")
}

async fn call(bundle: &ModelBundle, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::ORIGIN, "http://localhost:5173")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = router(Arc::new(bundle.clone())).oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap(), ctype)
}

fn synth_record(b: &ModelBundle, row: usize) -> Value {
    let names = b.schema.feature_names();
    let obj: serde_json::Map<String, Value> = names
        .into_iter()
        .zip(&b.background.rows[row])
        .map(|(n, v)| (n, json!(v)))
        .collect();
    Value::Object(obj)
}

#[tokio::test]
async fn healthz_and_json_content_type() {
    let (status, body, ctype) = call(&dummy_bundle(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
    assert_eq!(ctype, "application/json");
}

#[tokio::test]
async fn schema_lists_three_features() {
    let (status, body, _) = call(&dummy_bundle(), "GET", "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 3);
    assert_eq!(body[0], json!({"name": "a", "kind": "numeric"}));
}

#[tokio::test]
async fn dummy_mean_predicts_train_mean() {
    let body = json!({"features": {"a": 4.0, "b": 1, "c": 9.5}}).to_string();
    let (status, resp, _) = call(&dummy_bundle(), "POST", "/predict", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp, json!({"prediction": 2.0}));
}

#[tokio::test]
async fn explain_payload_is_efficient() {
    let b = gbt_bundle();
    for (method, extra) in [("exact", json!({})), ("sampled", json!({"n_perms": 200, "seed": 3}))] {
        let mut req = json!({"features": synth_record(&b, 2), "method": method});
        req.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        let (status, resp, _) = call(&b, "POST", "/explain", Some(req.to_string())).await;
        assert_eq!(status, StatusCode::OK, "{resp}");
        let prediction = resp["prediction"].as_f64().unwrap();
        let total: f64 = resp["contributions"].as_array().unwrap().iter().map(|c| c["phi"].as_f64().unwrap()).sum();
        let gap = (resp["base_value"].as_f64().unwrap() + total - prediction).abs();
        assert!(gap <= 1e-6 * prediction.abs().max(1.0), "{method}: gap {gap}");
        assert_eq!(resp["method"], json!(method));
        assert_eq!(resp["contributions"].as_array().unwrap().len(), 7);
    }
}

#[tokio::test]
async fn explain_is_deterministic() {
    let b = gbt_bundle();
    let req = json!({"features": synth_record(&b, 0), "method": "sampled", "n_perms": 50}).to_string();
    let (_, first, _) = call(&b, "POST", "/explain", Some(req.clone())).await;
    let (_, second, _) = call(&b, "POST", "/explain", Some(req)).await;
    assert_eq!(first, second);
    assert_eq!(first["seed"], json!(0));
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let b = dummy_bundle();
    for body in ["{not json", "[]", r#"{"features": 3}"#, r#"{"features": {}, "extra": 1}"#] {
        let (status, resp, _) = call(&b, "POST", "/predict", Some(body.into())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(resp["error"].is_string());
    }
    let (status, _, _) = call(&b, "POST", "/explain", Some(r#"{"features": {}, "method": "magic"}"#.into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = call(&b, "GET", "/global?top_k=zero", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn schema_violations_are_422() {
    let b = dummy_bundle();
    let cases = [
        json!({"features": {"a": 1, "b": 0, "c": 1, "nope": 2}}),
        json!({"features": {"a": 1, "b": 0}}),
        json!({"features": {"a": "x", "b": 0, "c": 1}}),
    ];
    for body in cases {
        let (status, resp, _) = call(&b, "POST", "/predict", Some(body.to_string())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(resp["error"].is_string());
    }
    let g = gbt_bundle();
    let mut half = synth_record(&g, 0);
    half["entire_home"] = json!(0.5);
    let (status, _, _) = call(&g, "POST", "/predict", Some(json!({"features": half}).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let zero = json!({"features": {"a": 1, "b": 0, "c": 1}, "method": "sampled", "n_perms": 0});
    let (status, _, _) = call(&b, "POST", "/explain", Some(zero.to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn exact_is_capped_at_twelve_features() {
    for (m, expected) in [(12, StatusCode::OK), (13, StatusCode::UNPROCESSABLE_ENTITY)] {
        let b = wide_bundle(m);
        let req = json!({"features": synth_record(&b, 0), "method": "exact"});
        let (status, resp, _) = call(&b, "POST", "/explain", Some(req.to_string())).await;
        assert_eq!(status, expected, "M={m}");
        if m == 13 {
            assert!(resp["error"].as_str().unwrap().contains("sampled"));
            let sampled = json!({"features": synth_record(&b, 0), "method": "sampled", "n_perms": 10});
            let (status, _, _) = call(&b, "POST", "/explain", Some(sampled.to_string())).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
}

#[tokio::test]
async fn global_respects_top_k() {
    let b = gbt_bundle();
    let (status, all, _) = call(&b, "GET", "/global", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(all.as_array().unwrap().len(), 7);
    let (_, top, _) = call(&b, "GET", "/global?top_k=3", None).await;
    assert_eq!(top.as_array().unwrap()[..], all.as_array().unwrap()[..3]);
}

#[tokio::test]
async fn categorical_level_names_expand_to_one_hot() {
    let b = categorical_bundle();
    let by_level = json!({"features": {"size": 4, "room": "private"}}).to_string();
    let by_column = json!({"features": {"size": 4, "room=shared": 0, "room=private": 1, "room=entire": 0}}).to_string();
    let (s1, a, _) = call(&b, "POST", "/predict", Some(by_level)).await;
    let (s2, c, _) = call(&b, "POST", "/predict", Some(by_column)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, c);
    let bad = json!({"features": {"size": 4, "room": "castle"}}).to_string();
    let (status, _, _) = call(&b, "POST", "/predict", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_route_is_json_404() {
    let (status, resp, _) = call(&dummy_bundle(), "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(resp["error"].is_string());
}
