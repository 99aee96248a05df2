//! HTTP service over one run directory, for the interactive axis-finding
//! and segmentation steps.
//!
//! Every endpoint lives under `/v1/`. Image payloads are row-major `data`
//! arrays with explicit `rows`, `cols` and value range. Mutations are
//! serialised; reads run concurrently. Each mutation has a CLI equivalent:
//!
//! | endpoint                 | CLI                                           |
//! |--------------------------|-----------------------------------------------|
//! | `POST /v1/calibration`   | `vunwrap accept-calibration`                  |
//! | `POST /v1/path`          | `vunwrap segment --set segment.optimize=false` |
//! | `POST /v1/stages/{name}` | `vunwrap {name}`                              |

mod error;
pub mod jobs;

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use vunwrap_core::calibration::opposite_index;
use vunwrap_core::image::DisplayRange;
use vunwrap_core::segmentation::{fit_spline, ControlPoints, GAConfig, SpiralPath};
use vunwrap_core::Image2D;
use vunwrap_pipeline::manifest::Staleness;
use vunwrap_pipeline::{Manifest, Pipeline, PipelineConfig, Stage};

pub use error::{ApiError, ApiResult};
use jobs::{JobStatus, JobTable};

pub const PORT_VAR: &str = "VUNWRAP_PORT";
pub const ROOT_VAR: &str = "VUNWRAP_ROOT";
pub const CONFIG_VAR: &str = "VUNWRAP_CONFIG";
pub const MAX_JOBS_VAR: &str = "VUNWRAP_MAX_JOBS";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    pub pipeline: PipelineConfig,
    pub max_jobs: usize,
}

impl ServerConfig {
    /// Reads the port, artifact root, optional config file and job limit
    /// from the environment.
    pub fn from_env() -> vunwrap_core::Result<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let parse = |k: &str, v: String| {
            v.parse::<usize>()
                .map_err(|_| vunwrap_core::Error::Config(format!("{k}={v} is not a non-negative integer")))
        };
        let mut pipeline = match var(CONFIG_VAR) {
            Some(p) => PipelineConfig::load(&PathBuf::from(p))?,
            None => PipelineConfig::default(),
        };
        if let Some(root) = var(ROOT_VAR) {
            pipeline.output = root.into();
        }
        let port = match var(PORT_VAR) {
            Some(v) => u16::try_from(parse(PORT_VAR, v.clone())?)
                .map_err(|_| vunwrap_core::Error::Config(format!("{PORT_VAR}={v} is not a port")))?,
            None => DEFAULT_PORT,
        };
        let max_jobs = match var(MAX_JOBS_VAR) {
            Some(v) => parse(MAX_JOBS_VAR, v)?,
            None => 1,
        };
        Ok(Self {
            port,
            pipeline,
            max_jobs,
        })
    }
}

pub struct AppState {
    pipeline: Pipeline,
    writes: Mutex<()>,
    jobs: JobTable,
}

impl AppState {
    pub fn new(pipeline: Pipeline, max_jobs: usize) -> Self {
        Self {
            pipeline,
            writes: Mutex::new(()),
            jobs: JobTable::new(max_jobs),
        }
    }
}

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/manifest", get(manifest))
        .route("/v1/projections", get(projections))
        .route("/v1/difference", get(difference))
        .route("/v1/calibration", get(calibration).post(accept_calibration))
        .route("/v1/slices", get(slices))
        .route("/v1/slices/{z}", get(slice))
        .route("/v1/fit", post(fit))
        .route("/v1/optimize", post(submit_optimize))
        .route("/v1/optimize/{id}", get(poll_optimize).delete(cancel_optimize))
        .route("/v1/path", get(path).post(accept_path))
        .route("/v1/stages/{stage}", post(run_stage))
        .route("/v1/sheet", get(sheet))
        .with_state(state)
}

/// Runs blocking pipeline work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> vunwrap_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn require(path: &std::path::Path, what: &str, stage: Stage) -> ApiResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(ApiError::not_found(format!("no {what} yet; run `{stage}` first")))
    }
}

#[derive(Serialize)]
struct ImagePayload {
    rows: usize,
    cols: usize,
    min: f64,
    max: f64,
    data: Vec<f64>,
}

impl From<&Image2D> for ImagePayload {
    fn from(img: &Image2D) -> Self {
        Self {
            rows: img.rows(),
            cols: img.cols(),
            min: img.min(),
            max: img.max(),
            data: img.as_slice().to_vec(),
        }
    }
}

async fn manifest(State(s): Shared) -> ApiResult<Json<Value>> {
    let root = s.pipeline.layout().root.clone();
    let (manifest, stale) = blocking(move || {
        let m = Manifest::load(&root)?;
        let stale = m.verify(&root)?;
        Ok((m, stale))
    })
    .await?;
    let stale: Vec<Value> = stale
        .into_iter()
        .map(|st| match st {
            Staleness::Missing { stage, path } => json!({ "stage": stage, "path": path, "reason": "missing" }),
            Staleness::Modified { stage, path } => json!({ "stage": stage, "path": path, "reason": "modified" }),
            Staleness::InputChanged { stage, path } => json!({ "stage": stage, "path": path, "reason": "input_changed" }),
        })
        .collect();
    Ok(Json(json!({ "manifest": manifest, "stale": stale })))
}

async fn projections(State(s): Shared) -> ApiResult<Json<Value>> {
    let l = s.pipeline.layout();
    require(&l.frames_meta(), "projections", Stage::Simulate)?;
    let meta = l.load_frames_meta()?;
    let g = meta.geometry;
    let angles: Vec<f64> = (0..meta.count).map(|i| g.angle(i)).collect();
    let pairs: Vec<usize> = (0..meta.count)
        .filter(|&i| opposite_index(i, g.num_angles, g.angle_range).is_ok())
        .collect();
    let axis = match l.load_calibration() {
        Ok(c) => json!({ "center_column": c.calibration.center_column, "tilt_deg": c.calibration.tilt.to_degrees(), "calibrated": true }),
        Err(_) => json!({ "center_column": (meta.cols as f64 - 1.0) / 2.0, "tilt_deg": 0.0, "calibrated": false }),
    };
    Ok(Json(json!({
        "count": meta.count,
        "rows": meta.rows,
        "cols": meta.cols,
        "scale": meta.scale,
        "angle_range": g.angle_range,
        "angles": angles,
        "files": meta.files,
        "slice_rows": meta.slice_rows,
        "pair_indices": pairs,
        "axis": axis,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DifferenceQuery {
    #[serde(default)]
    pair: usize,
    center: f64,
    #[serde(default)]
    tilt_deg: f64,
}

async fn difference(State(s): Shared, q: Result<Query<DifferenceQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let Query(q) = q?;
    let l = s.pipeline.layout();
    require(&l.frames_meta(), "projections", Stage::Simulate)?;
    let meta = l.load_frames_meta()?;
    let opposite = opposite_index(q.pair, meta.geometry.num_angles, meta.geometry.angle_range)?;
    let state = s.clone();
    let d = blocking(move || state.pipeline.difference(q.pair, q.center, q.tilt_deg.to_radians())).await?;
    let residual = d.mean_abs();
    Ok(Json(json!({
        "pair": q.pair,
        "opposite": opposite,
        "center_column": q.center,
        "tilt_deg": q.tilt_deg,
        "residual": residual,
        "image": ImagePayload {
            min: d.min,
            max: d.max,
            ..ImagePayload::from(&d.signed)
        },
    })))
}

async fn calibration(State(s): Shared) -> ApiResult<Json<Value>> {
    let l = s.pipeline.layout();
    require(&l.calibration(), "calibration", Stage::Calibrate)?;
    Ok(Json(serde_json::to_value(l.load_calibration()?).expect("plain data")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationBody {
    center_column: f64,
    #[serde(default)]
    tilt_deg: f64,
}

async fn accept_calibration(
    State(s): Shared,
    body: Result<Json<CalibrationBody>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(b) = body?;
    let _write = s.writes.lock().await;
    let state = s.clone();
    let record = blocking(move || state.pipeline.accept_calibration(b.center_column, b.tilt_deg.to_radians())).await?;
    Ok(Json(serde_json::to_value(record).expect("plain data")))
}

async fn slices(State(s): Shared) -> ApiResult<Json<Value>> {
    let l = s.pipeline.layout();
    let sidecar = l.volume_stem().with_extension("json");
    require(&sidecar, "reconstruction", Stage::Reconstruct)?;
    let meta: vunwrap_pipeline::store::RawMeta = vunwrap_pipeline::store::read_json(&sidecar)?;
    Ok(Json(json!({
        "count": meta.dims[0],
        "rows": meta.dims[1],
        "cols": meta.dims[2],
        "min": meta.min,
        "max": meta.max,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DisplayQuery {
    #[serde(default = "default_low")]
    low: f64,
    #[serde(default = "default_high")]
    high: f64,
    #[serde(default)]
    invert: bool,
}

fn default_low() -> f64 {
    1.0
}

fn default_high() -> f64 {
    99.0
}

#[derive(Serialize)]
struct NormalizedImage {
    #[serde(flatten)]
    image: ImagePayload,
    /// Source values mapped to 0 and 1.
    display: DisplayRange,
}

fn normalized(img: &Image2D, q: &DisplayQuery) -> ApiResult<NormalizedImage> {
    if !(0.0..=100.0).contains(&q.low) || !(0.0..=100.0).contains(&q.high) || q.low >= q.high {
        return Err(ApiError::bad_request(format!(
            "percentiles low={} high={} must satisfy 0 <= low < high <= 100",
            q.low, q.high
        )));
    }
    let (n, display) = img.normalized(q.low, q.high, q.invert);
    Ok(NormalizedImage {
        image: ImagePayload::from(&n),
        display,
    })
}

async fn slice(
    State(s): Shared,
    Path(z): Path<usize>,
    q: Result<Query<DisplayQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = q?;
    let l = s.pipeline.layout().clone();
    require(&l.volume_stem().with_extension("json"), "reconstruction", Stage::Reconstruct)?;
    let rec = blocking(move || l.load_slice(z)).await?;
    Ok(Json(json!({ "z": z, "image": normalized(&rec.image, &q)? })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitBody {
    points: Vec<(f64, f64)>,
    smoothing: Option<f64>,
}

#[derive(Serialize)]
struct PathPayload {
    count: usize,
    spacing: f64,
    arc_length: f64,
    samples: Vec<(f64, f64)>,
}

impl From<&SpiralPath> for PathPayload {
    fn from(p: &SpiralPath) -> Self {
        Self {
            count: p.samples.len(),
            spacing: p.spacing,
            arc_length: p.arc_length,
            samples: p.samples.clone(),
        }
    }
}

fn control_points(points: Vec<(f64, f64)>) -> ApiResult<ControlPoints> {
    Ok(ControlPoints::new(points)?)
}

async fn fit(State(s): Shared, body: Result<Json<FitBody>, JsonRejection>) -> ApiResult<Json<Value>> {
    let Json(b) = body?;
    let control = control_points(b.points)?;
    let smoothing = b.smoothing.unwrap_or(s.pipeline.config().segment.smoothing);
    let path = blocking(move || fit_spline(&control, smoothing)).await?;
    Ok(Json(json!({ "smoothing": smoothing, "path": PathPayload::from(&path) })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeBody {
    points: Vec<(f64, f64)>,
    slice: Option<usize>,
    smoothing: Option<f64>,
    /// Replaces the configured GA settings, seed included.
    ga: Option<GAConfig>,
}

async fn submit_optimize(
    State(s): Shared,
    body: Result<Json<OptimizeBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobStatus>)> {
    let Json(b) = body?;
    let control = control_points(b.points)?;
    let config = s.pipeline.config();
    let ga = b.ga.unwrap_or(GAConfig {
        seed: config.segment.ga.seed.wrapping_add(config.seed),
        ..config.segment.ga
    });
    ga.validate()?;
    let smoothing = b.smoothing.unwrap_or(config.segment.smoothing);
    let l = s.pipeline.layout().clone();
    let sidecar = l.volume_stem().with_extension("json");
    require(&sidecar, "reconstruction", Stage::Reconstruct)?;
    let meta: vunwrap_pipeline::store::RawMeta = vunwrap_pipeline::store::read_json(&sidecar)?;
    let z = b.slice.or(config.segment.reference_slice).unwrap_or(meta.dims[0] / 2);
    if z >= meta.dims[0] {
        return Err(ApiError::bad_request(format!("slice {z} out of range 0..{}", meta.dims[0])));
    }
    // Rejects self-intersecting starting curves before queueing.
    fit_spline(&control, smoothing)?;
    let status = s.jobs.submit(z, control, ga, smoothing, move || l.load_slice(z));
    Ok((StatusCode::ACCEPTED, Json(status)))
}

fn job_payload(status: JobStatus) -> Json<Value> {
    let best_fitness = status.history.last().copied();
    let samples = fit_spline(&status.best, status.smoothing).ok().map(|p| PathPayload::from(&p));
    Json(json!({
        "job": status,
        "best_fitness": best_fitness,
        "path": samples,
    }))
}

async fn poll_optimize(State(s): Shared, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let status = s.jobs.status(id).ok_or_else(|| ApiError::not_found(format!("no optimize job {id}")))?;
    Ok(job_payload(status))
}

async fn cancel_optimize(State(s): Shared, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let status = s.jobs.cancel(id).ok_or_else(|| ApiError::not_found(format!("no optimize job {id}")))?;
    Ok(job_payload(status))
}

async fn path(State(s): Shared) -> ApiResult<Json<Value>> {
    let l = s.pipeline.layout();
    require(&l.path(), "segmented path", Stage::Segment)?;
    let rec = l.load_path()?;
    Ok(Json(json!({
        "reference_slice": rec.reference_slice,
        "optimized": rec.optimized,
        "fitness": rec.fitness,
        "history": rec.history,
        "control_points": rec.seed,
        "smoothing": rec.path.smoothing,
        "path": PathPayload::from(&rec.path),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathBody {
    points: Vec<(f64, f64)>,
    smoothing: Option<f64>,
    slice: Option<usize>,
}

async fn accept_path(State(s): Shared, body: Result<Json<PathBody>, JsonRejection>) -> ApiResult<Json<Value>> {
    let Json(b) = body?;
    let control = control_points(b.points)?;
    let smoothing = b.smoothing.unwrap_or(s.pipeline.config().segment.smoothing);
    let _write = s.writes.lock().await;
    let state = s.clone();
    blocking(move || state.pipeline.accept_path(&control, smoothing, b.slice)).await?;
    drop(_write);
    path(State(s)).await
}

async fn run_stage(State(s): Shared, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let stage: Stage = name.parse().map_err(|e: vunwrap_core::Error| ApiError::not_found(e.to_string()))?;
    let _write = s.writes.lock().await;
    let state = s.clone();
    let manifest = blocking(move || state.pipeline.run(stage)).await?;
    let record = match stage {
        Stage::All => serde_json::to_value(&manifest.stages),
        s => serde_json::to_value(manifest.get(s)),
    }
    .expect("plain data");
    Ok(Json(json!({ "stage": stage, "record": record })))
}

async fn sheet(State(s): Shared, q: Result<Query<DisplayQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let Query(q) = q?;
    let l = s.pipeline.layout().clone();
    require(&l.sheet_stem().with_extension("json"), "unwrapped sheet", Stage::Unwrap)?;
    let (sheet, info) = blocking(move || l.load_sheet()).await?;
    Ok(Json(json!({
        "image": normalized(&sheet.image, &q)?,
        "axes": ["z", "arc"],
        "spacing": info.spacing,
        "arc_length": info.arc_length,
        "band_halfwidth": info.band_halfwidth,
        "z_offset": info.z_offset,
        "provenance": info.provenance,
        "score": info.score,
    })))
}
