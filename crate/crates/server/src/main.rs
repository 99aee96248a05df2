//! `vunwrap-server`: serves one run directory over HTTP.
//!
//! Environment: `VUNWRAP_ROOT` (run directory), `VUNWRAP_PORT` (default
//! 8080), `VUNWRAP_CONFIG` (optional TOML config), `VUNWRAP_MAX_JOBS`
//! (concurrent optimize jobs, default 1).

use std::process::ExitCode;
use std::sync::Arc;

use vunwrap_pipeline::Pipeline;
use vunwrap_server::{router, AppState, ServerConfig};

async fn run() -> Result<(), String> {
    let config = ServerConfig::from_env().map_err(|e| e.to_string())?;
    let pipeline = Pipeline::new(config.pipeline.clone()).map_err(|e| e.to_string())?;
    let root = pipeline.layout().root.clone();
    let app = router(Arc::new(AppState::new(pipeline, config.max_jobs)));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port))
        .await
        .map_err(|e| format!("cannot bind port {}: {e}", config.port))?;
    eprintln!("serving {} on port {}", root.display(), config.port);
    axum::serve(listener, app).await.map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    match run().await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
