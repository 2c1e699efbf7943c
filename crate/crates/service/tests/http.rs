use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use sketchseg_core::network::{save_checkpoint, Model, NetworkSpec, Profile};
use sketchseg_core::refine::EnergyParams;
use sketchseg_core::render::{synth_sketch_dataset, toy_chair, toy_chair_labels, Camera, CategorySpec};
use sketchseg_core::retrieval::{build_feature_db, FeatureDb};
use sketchseg_core::sketch::{sketch_to_value, Sketch};
use sketchseg_service::{router, AppState, Config, ServiceError};

struct Fixture {
    model: Model,
    db: FeatureDb,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let model = Model::init(NetworkSpec::for_profile(Profile::Reduced, 4).unwrap(), toy_chair_labels(), 5).unwrap();
        let cams: Vec<Camera> = [0.0, 180.0].iter().map(|&a| Camera::new(a, 25.0, 2.5, 64)).collect();
        let mut a = toy_chair(0);
        a.id = "a".into();
        let mut b = toy_chair(1);
        b.id = "b".into();
        let db = build_feature_db(&model, &[a, b], &cams).unwrap();
        Fixture { model, db }
    })
}

fn app(with_db: bool) -> Router {
    let f = fixture();
    let db = with_db.then(|| f.db.clone());
    router(Arc::new(AppState::from_models(vec![(f.model.clone(), db)], EnergyParams::default())))
}

fn chair_sketch() -> Sketch {
    synth_sketch_dataset(&CategorySpec::chair(), 1, 3, 64).unwrap().remove(0).sketch
}

async fn call(app: Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap()
}

#[tokio::test]
async fn lists_categories() {
    let (s, v) = call(app(true), "GET", "/v1/categories", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["categories"][0]["name"], "chair");
    assert_eq!(v["categories"][0]["k"], 4);
    assert_eq!(v["categories"][0]["labels"], json!(["background", "back", "seat", "leg"]));
}

#[tokio::test]
async fn segments_a_sketch() {
    let sketch = chair_sketch();
    let (s, v) = call(app(false), "POST", "/v1/segment", Some(sketch_to_value(&sketch))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let strokes = v["strokes"].as_array().unwrap();
    assert_eq!(strokes.len(), sketch.strokes.len());
    for (out, stroke) in strokes.iter().zip(&sketch.strokes) {
        let labels = out["labels"].as_array().unwrap();
        assert_eq!(labels.len(), stroke.len());
        // Refinement makes each stroke's labels constant only up to chain
        // cuts, but every label is a real part.
        assert!(labels.iter().all(|l| (1..4).contains(&l.as_u64().unwrap())));
        assert!((1..4).contains(&out["majority"].as_u64().unwrap()));
    }
    assert_eq!(v["raw"].as_array().unwrap().len(), strokes.len());
    assert!(v["energy"].as_f64().unwrap() <= v["raw_energy"].as_f64().unwrap() + 1e-9);
    assert!(v["latency_ms"].as_f64().unwrap() > 0.0);
    assert!(v["timing_ms"]["infer"].as_f64().unwrap() > 0.0);

    let mut doc = sketch_to_value(&sketch);
    doc["refine"] = json!(false);
    let (_, v) = call(app(false), "POST", "/v1/segment", Some(doc)).await;
    assert_eq!(v["strokes"], v["raw"]);
}

#[tokio::test]
async fn segment_errors() {
    let mut empty = sketch_to_value(&chair_sketch());
    empty["strokes"] = json!([]);
    let (s, v) = call(app(false), "POST", "/v1/segment", Some(empty)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "empty_sketch"));

    let mut lamp = sketch_to_value(&chair_sketch());
    lamp["category"] = json!("lamp");
    let (s, v) = call(app(false), "POST", "/v1/segment", Some(lamp)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "unknown_category"));

    let (s, v) = call(app(false), "POST", "/v1/segment", Some(json!({"category": "chair"}))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "invalid_sketch"));

    let mut neg = sketch_to_value(&chair_sketch());
    neg["cs"] = json!(-1.0);
    let (s, v) = call(app(false), "POST", "/v1/segment", Some(neg)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "bad_request"));

    let req = Request::builder().method("POST").uri("/v1/segment").body(Body::from("{nope")).unwrap();
    let resp = app(false).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (s, v) = call(app(false), "GET", "/v2/nothing", None).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "not_found"));
}

#[tokio::test]
async fn retrieve_then_assemble() {
    let sketch = chair_sketch();
    let (_, seg) = call(app(true), "POST", "/v1/segment", Some(sketch_to_value(&sketch))).await;
    let body = json!({"sketch": sketch_to_value(&sketch), "result": seg, "top_n": 3});
    let (s, v) = call(app(true), "POST", "/v1/retrieve", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let parts = v["parts"].as_array().unwrap();
    assert!(!parts.is_empty());
    for p in parts {
        let c = p["candidates"].as_array().unwrap();
        assert_eq!(c.len(), 3);
        let d: Vec<f64> = c.iter().map(|x| x["distance"].as_f64().unwrap()).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }

    // Ground-truth labels stand in for a result.
    let (s, _) = call(app(true), "POST", "/v1/retrieve", Some(json!({"sketch": sketch_to_value(&sketch)}))).await;
    assert_eq!(s, StatusCode::OK);

    let (s, v) = call(app(false), "POST", "/v1/retrieve", Some(body)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "no_feature_db"));

    let picks: Vec<Value> = parts
        .iter()
        .map(|p| json!({"label": p["label"], "mesh": p["candidates"][0]["mesh"], "camera": 0}))
        .collect();
    let (s, v) = call(app(true), "POST", "/v1/assemble", Some(json!({"category": "chair", "parts": picks}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["placed"].as_array().unwrap().len(), parts.len());
    assert!(v["residual"].as_f64().unwrap() >= 0.0);

    let bad = json!({"category": "chair", "parts": [{"label": 1, "mesh": "zzz"}]});
    let (s, v) = call(app(true), "POST", "/v1/assemble", Some(bad)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "unknown_mesh"));
}

#[tokio::test]
async fn retrieve_rejects_mismatched_labels() {
    let sketch = chair_sketch();
    let body = json!({"sketch": sketch_to_value(&sketch), "result": {"strokes": [{"labels": [1]}]}});
    let (s, v) = call(app(true), "POST", "/v1/retrieve", Some(body)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "label_mismatch"));
}

#[test]
fn startup_loads_config_and_names_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&fixture().model, dir.path().join("chair.sksg")).unwrap();
    fixture().db.save(dir.path().join("chair.skfd")).unwrap();
    let cfg = dir.path().join("service.conf");
    std::fs::write(&cfg, "cs = 12\ncategory.chair.checkpoint = chair.sksg\ncategory.chair.featuredb = chair.skfd\n").unwrap();
    let state = AppState::load(&Config::load(&cfg).unwrap()).unwrap();
    assert_eq!(state.params.c_s, 12.0);
    assert!(state.categories["chair"].db.is_some());

    std::fs::write(&cfg, "category.chair.checkpoint = gone.sksg\n").unwrap();
    let err = AppState::load(&Config::load(&cfg).unwrap()).err().unwrap();
    assert!(matches!(err, ServiceError::Checkpoint { .. }));
    assert!(err.to_string().contains("gone.sksg"), "{err}");

    std::fs::write(&cfg, "category.lamp.checkpoint = chair.sksg\n").unwrap();
    let err = AppState::load(&Config::load(&cfg).unwrap()).err().unwrap();
    assert!(matches!(err, ServiceError::CategoryName { .. }));
}
