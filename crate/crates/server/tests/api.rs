use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vunwrap_core::preprocess::to_line_integral;
use vunwrap_core::segmentation::{optimize_with, ControlPoints, GAConfig};
use vunwrap_pipeline::{Pipeline, PipelineConfig, Stage};
use vunwrap_server::{router, AppState};

fn small_config(output: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.output = output.to_path_buf();
    c.phantom.grid_size = 96;
    c.phantom.inner_radius = 12.0;
    c.phantom.layer_spacing = 8.0;
    c.phantom.num_turns = 3.0;
    c.phantom.sheet_height_px = 8;
    c.phantom.sheet_width_px = c.phantom.spiral().total_arc_length().round() as usize;
    c.texture.text = "VIRTUAL UNWRAPPING".into();
    c.texture.scale = 1;
    c.geometry.num_angles = 180;
    c.geometry.num_detectors = 112;
    c.geometry.center_offset = 2.0;
    c.acquisition.row_margin = 2;
    c.segment.ga.population = 8;
    c.segment.ga.generations = 6;
    c
}

/// A service over a fresh run directory with `stages` already run.
fn app(dir: &Path, stages: &[Stage], max_jobs: usize) -> (Router, Pipeline) {
    let p = Pipeline::new(small_config(dir)).unwrap();
    for &s in stages {
        p.run(s).unwrap();
    }
    (router(Arc::new(AppState::new(p.clone(), max_jobs))), p)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

fn spiral_points(p: &Pipeline) -> Vec<(f64, f64)> {
    p.config().phantom.spiral().decimated(8)
}

async fn wait_for(app: &Router, id: u64, states: &[&str]) -> Value {
    for _ in 0..600 {
        let (status, body) = get(app, &format!("/v1/optimize/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if states.contains(&body["job"]["state"].as_str().unwrap()) {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("job {id} never reached {states:?}");
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[tokio::test]
async fn missing_artifacts_are_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), &[], 1);
    for uri in [
        "/v1/projections",
        "/v1/difference?center=10",
        "/v1/calibration",
        "/v1/slices",
        "/v1/slices/0",
        "/v1/path",
        "/v1/sheet",
        "/v1/optimize/7",
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}: {body}");
        assert!(body["error"].is_string(), "{uri}");
    }
    let (status, body) = post(&app, "/v1/stages/reconstruct", json!(null)).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");
    assert!(body["error"].as_str().unwrap().contains("simulate"));
    let (status, _) = post(&app, "/v1/stages/flatten", json!(null)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = get(&app, "/v1/manifest").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["stale"], json!([]));
}

#[tokio::test]
async fn difference_view_and_accepted_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let (app, p) = app(dir.path(), &[Stage::Simulate], 1);
    let (status, proj) = get(&app, "/v1/projections").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(proj["count"], 180);
    assert_eq!(proj["pair_indices"].as_array().unwrap().len(), 180);
    assert_eq!(proj["axis"]["calibrated"], false);

    let truth = p.layout().load_ground_truth().unwrap().unwrap().0.center_column;
    let (status, aligned) = get(&app, &format!("/v1/difference?pair=3&center={truth}")).await;
    assert_eq!(status, StatusCode::OK, "{aligned}");
    let img = &aligned["image"];
    let data = floats(&img["data"]);
    assert_eq!(data.len(), (img["rows"].as_u64().unwrap() * img["cols"].as_u64().unwrap()) as usize);
    let stack = p.layout().load_stack().unwrap();
    let frame_range = to_line_integral(&stack.frames[3].data, stack.i0_estimate).unwrap().max();
    let worst = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 1e-3 * frame_range, "{worst} vs range {frame_range}");
    assert_eq!(img["min"].as_f64().unwrap(), data.iter().copied().fold(f64::INFINITY, f64::min));

    let (_, off) = get(&app, &format!("/v1/difference?pair=3&center={}", truth + 5.0)).await;
    assert!(off["residual"].as_f64().unwrap() > aligned["residual"].as_f64().unwrap());

    let (status, _) = get(&app, "/v1/difference?pair=3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/v1/difference?pair=9999&center=10").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, rec) = post(&app, "/v1/calibration", json!({ "center_column": truth, "tilt_deg": 0.0 })).await;
    assert_eq!(status, StatusCode::OK, "{rec}");
    assert_eq!(rec["method"], "manual");
    let (_, stored) = get(&app, "/v1/calibration").await;
    assert_eq!(stored, rec);
    let (_, m) = get(&app, "/v1/manifest").await;
    assert_eq!(m["manifest"]["stages"]["calibrate"]["summary"]["center_column"].as_f64(), Some(truth));

    let (status, _) = post(&app, "/v1/calibration", json!({ "center": truth })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, run) = post(&app, "/v1/stages/reconstruct", json!(null)).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    let inputs = run["record"]["inputs"].as_array().unwrap();
    assert!(inputs.iter().any(|a| a["path"] == "calibration.json"));
}

#[tokio::test]
async fn fit_validates_control_points() {
    let dir = tempfile::tempdir().unwrap();
    let (app, p) = app(dir.path(), &[], 1);
    let (status, body) = post(&app, "/v1/fit", json!({ "points": [[0, 0], [5, 1], [9, 4]] })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains('4'), "{body}");

    let (status, body) = post(&app, "/v1/fit", json!({ "pts": [] })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("pts"), "{body}");

    let req = Request::post("/v1/fit")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);

    let (status, body) = post(&app, "/v1/fit", json!({ "points": spiral_points(&p), "smoothing": 1.0 })).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let path = &body["path"];
    assert_eq!(path["samples"].as_array().unwrap().len() as u64, path["count"].as_u64().unwrap());
    assert!((path["spacing"].as_f64().unwrap() - 0.5).abs() < 0.01);

    let bowtie = json!({ "points": [[0, 0], [10, 10], [10, 0], [0, 10], [5, 20]] });
    let (status, body) = post(&app, "/v1/fit", bowtie).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("crosses itself"), "{body}");
}

#[tokio::test]
async fn optimize_jobs_are_isolated_and_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let (app, p) = app(dir.path(), &[Stage::Simulate, Stage::Calibrate, Stage::Reconstruct], 1);
    let points = spiral_points(&p);
    let slice = p.layout().load_slice(3).unwrap();
    let mut ids = Vec::new();
    for seed in [11u64, 12] {
        let ga = GAConfig {
            population: 8,
            generations: 6,
            seed,
            ..GAConfig::default()
        };
        let (status, body) = post(&app, "/v1/optimize", json!({ "points": points, "slice": 3, "ga": ga })).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{body}");
        ids.push((body["id"].as_u64().unwrap(), ga));
    }
    for (id, ga) in ids {
        let done = wait_for(&app, id, &["done", "failed"]).await;
        assert_eq!(done["job"]["state"], "done", "{done}");
        let history = floats(&done["job"]["history"]);
        assert!(history.windows(2).all(|w| w[1] >= w[0]), "{history:?}");

        let direct = optimize_with(&slice, &ControlPoints::new(points.clone()).unwrap(), &ga, 1.0, |_| true).unwrap();
        assert_eq!(done["best_fitness"].as_f64(), Some(direct.fitness));
        let samples: Vec<(f64, f64)> = serde_json::from_value(done["path"]["samples"].clone()).unwrap();
        assert_eq!(samples, direct.path.samples);
    }

    let (status, _) = post(&app, "/v1/optimize", json!({ "points": points, "slice": 99 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, "/v1/optimize", json!({ "points": &points[..3] })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn queued_job_fails_when_its_slice_disappears() {
    let dir = tempfile::tempdir().unwrap();
    let (app, p) = app(dir.path(), &[Stage::Simulate, Stage::Calibrate, Stage::Reconstruct], 1);
    let points = spiral_points(&p);
    let long = json!({ "points": points, "ga": { "population": 8, "generations": 100000 } });
    let (_, first) = post(&app, "/v1/optimize", long).await;
    let first = first["id"].as_u64().unwrap();
    wait_for(&app, first, &["running"]).await;

    let (_, second) = post(&app, "/v1/optimize", json!({ "points": points })).await;
    let second = second["id"].as_u64().unwrap();
    assert_eq!(get(&app, &format!("/v1/optimize/{second}")).await.1["job"]["state"], "queued");
    std::fs::remove_file(p.layout().volume_stem().with_extension("f32")).unwrap();

    let (status, _) = call(&app, Method::DELETE, &format!("/v1/optimize/{first}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let cancelled = wait_for(&app, first, &["cancelled"]).await;
    assert!(cancelled["path"]["count"].as_u64().unwrap() > 0);
    let failed = wait_for(&app, second, &["failed"]).await;
    assert!(failed["job"]["error"].as_str().unwrap().contains("volume.f32"), "{failed}");
}

#[tokio::test]
async fn accepted_path_unwraps_to_contracted_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let (app, p) = app(dir.path(), &[Stage::Simulate, Stage::Calibrate, Stage::Reconstruct], 1);
    let (status, slices) = get(&app, "/v1/slices").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(slices["count"], 8);
    let (status, s) = get(&app, "/v1/slices/2?low=0&high=100").await;
    assert_eq!(status, StatusCode::OK);
    let data = floats(&s["image"]["data"]);
    assert_eq!(data.len(), 96 * 96);
    assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(get(&app, "/v1/slices/8").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/v1/slices/2?low=50&high=10").await.0, StatusCode::BAD_REQUEST);

    let (status, rec) = post(&app, "/v1/path", json!({ "points": spiral_points(&p), "slice": 4 })).await;
    assert_eq!(status, StatusCode::OK, "{rec}");
    assert_eq!(rec["optimized"], false);
    assert_eq!(rec["reference_slice"], 4);
    let samples = rec["path"]["count"].as_u64().unwrap();

    let (status, run) = post(&app, "/v1/stages/unwrap", json!(null)).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    let (status, sheet) = get(&app, "/v1/sheet").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(sheet["image"]["rows"], 8);
    assert_eq!(sheet["image"]["cols"].as_u64(), Some(samples));
    assert!(sheet["score"]["ncc"].as_f64().unwrap() > 0.5, "{}", sheet["score"]);
    assert_eq!(sheet["axes"], json!(["z", "arc"]));
}
