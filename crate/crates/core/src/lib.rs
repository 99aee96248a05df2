//! Virtual unwrapping of rolled sheets from simulated tomography.

pub mod calibration;
pub mod error;
pub mod image;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod projection;
pub mod recon;
pub mod segmentation;
pub mod unwrap;

pub use error::{Error, Result};
pub use image::Image2D;
