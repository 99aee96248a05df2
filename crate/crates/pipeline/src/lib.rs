//! Headless orchestration of the unwrapping workflow.
//!
//! A run directory holds every artifact a stage produces: simulated frames,
//! the axis calibration, the reconstructed volume, the segmented path and the
//! unwrapped sheet, plus `manifest.json` with their content hashes.

pub mod config;
pub mod manifest;
pub mod stages;
pub mod store;

pub use config::PipelineConfig;
pub use manifest::{Manifest, Stage};
pub use stages::{Layout, Pipeline};
