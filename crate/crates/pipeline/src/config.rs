//! Run configuration: a TOML file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vunwrap_core::calibration::SearchBox;
use vunwrap_core::phantom::PhantomSpec;
use vunwrap_core::projection::Geometry;
use vunwrap_core::recon::{FilterSpec, MaskSpec};
use vunwrap_core::segmentation::GAConfig;
use vunwrap_core::unwrap::DEFAULT_BAND_HALFWIDTH;
use vunwrap_core::{Error, Result};

pub const DEFAULT_TEXT: &str = "VIRTUAL UNWRAPPING READS THE HIDDEN TEXT OF A ROLLED SCROLL WITHOUT EVER OPENING IT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Master seed: detector noise, seed-point jitter and the GA.
    pub seed: u64,
    /// Artifact directory.
    pub output: PathBuf,
    pub phantom: PhantomSpec,
    pub texture: TextureConfig,
    /// Acquisition geometry, including the simulated axis misalignment.
    pub geometry: Geometry,
    pub acquisition: AcquisitionConfig,
    pub calibration: CalibrationConfig,
    pub reconstruct: ReconstructConfig,
    pub segment: SegmentConfig,
    pub unwrap: UnwrapConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("vunwrap-run"),
            phantom: PhantomSpec::default(),
            texture: TextureConfig::default(),
            geometry: Geometry::default(),
            acquisition: AcquisitionConfig::default(),
            calibration: CalibrationConfig::default(),
            reconstruct: ReconstructConfig::default(),
            segment: SegmentConfig::default(),
            unwrap: UnwrapConfig::default(),
        }
    }
}

/// What is printed on the sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureConfig {
    pub text: String,
    /// Glyph magnification of the built-in 5x7 font.
    pub scale: usize,
    /// Grayscale image to print instead of `text` (dark = ink).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            text: DEFAULT_TEXT.into(),
            scale: 3,
            image: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub i0: f64,
    /// Detector noise sd relative to `i0`.
    pub noise_sd: f64,
    pub row_margin: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            i0: 1.0,
            noise_sd: 0.0,
            row_margin: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Opposite-frame pairs averaged in the objective.
    pub pairs: usize,
    pub search: SearchBox,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            pairs: 4,
            search: SearchBox::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub filter: FilterSpec,
    /// Fixed annulus mask; sized from the middle slice when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
    /// Inner radius of the automatic mask.
    pub mask_inner_radius: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            filter: FilterSpec::default(),
            mask: None,
            mask_inner_radius: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Control-point file; `all` writes one from the phantom spiral when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_points: Option<PathBuf>,
    /// Slice the GA runs on; the middle slice when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_slice: Option<usize>,
    /// Analytic seed points per spiral turn for `all`.
    pub seed_points_per_turn: usize,
    /// Half-width of the uniform jitter added to the analytic seed points, pixels.
    pub seed_jitter: f64,
    /// Run the GA; otherwise the spline through the control points is used as is.
    pub optimize: bool,
    pub smoothing: f64,
    pub ga: GAConfig,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            control_points: None,
            reference_slice: None,
            seed_points_per_turn: 8,
            seed_jitter: 0.0,
            optimize: true,
            smoothing: 1.0,
            ga: GAConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnwrapConfig {
    pub band_halfwidth: f64,
    /// Display percentiles for the exported sheet.
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub invert: bool,
}

impl Default for UnwrapConfig {
    fn default() -> Self {
        Self {
            band_halfwidth: DEFAULT_BAND_HALFWIDTH,
            low_percentile: 1.0,
            high_percentile: 99.0,
            invert: false,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key=value`; the value is parsed as TOML and falls
    /// back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        let mut table = &mut doc;
        for part in &parts[..parts.len() - 1] {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
        *self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.geometry.validate()?;
        self.reconstruct.filter.validate()?;
        self.segment.ga.validate()?;
        if let Some(mask) = &self.reconstruct.mask {
            mask.validate(self.phantom.grid_size)?;
        }
        let a = &self.acquisition;
        if !(a.i0 > 0.0 && a.i0.is_finite()) {
            return Err(Error::Config("acquisition.i0 must be positive".into()));
        }
        if !(a.noise_sd >= 0.0 && a.noise_sd.is_finite()) {
            return Err(Error::Config("acquisition.noise_sd must be non-negative".into()));
        }
        if self.calibration.pairs == 0 {
            return Err(Error::Config("calibration.pairs must be at least 1".into()));
        }
        let s = &self.segment;
        if !(0.0..=1.0).contains(&s.smoothing) {
            return Err(Error::Config("segment.smoothing must lie in [0, 1]".into()));
        }
        if s.seed_points_per_turn < 2 {
            return Err(Error::Config("segment.seed_points_per_turn must be at least 2".into()));
        }
        if !(s.seed_jitter >= 0.0 && s.seed_jitter.is_finite()) {
            return Err(Error::Config("segment.seed_jitter must be non-negative".into()));
        }
        if let Some(z) = s.reference_slice {
            if z >= self.phantom.sheet_height_px {
                return Err(Error::Config(format!(
                    "segment.reference_slice {z} outside 0..{}",
                    self.phantom.sheet_height_px
                )));
            }
        }
        let u = &self.unwrap;
        if !(u.band_halfwidth > 0.0 && u.band_halfwidth.is_finite()) {
            return Err(Error::Config("unwrap.band_halfwidth must be positive".into()));
        }
        if !(0.0 <= u.low_percentile && u.low_percentile < u.high_percentile && u.high_percentile <= 100.0) {
            return Err(Error::Config("unwrap percentiles must satisfy 0 <= low < high <= 100".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 7\n[geometry]\nnum_angles = 400\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.geometry.num_angles, 400);
        assert_eq!(cfg.geometry.num_detectors, Geometry::default().num_detectors);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[geometry]\nnum_angle = 4\n").is_err());
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("geometry.bogus=1").is_err());
        assert!(cfg.set("no_equals_sign").is_err());
    }

    #[test]
    fn overrides_set_nested_values() {
        let mut cfg = PipelineConfig::default();
        cfg.set("geometry.num_angles=400").unwrap();
        cfg.set("phantom.inner_radius = 28").unwrap();
        cfg.set("segment.ga.seed=9").unwrap();
        cfg.set("reconstruct.filter.kind=ramp").unwrap();
        cfg.set("output=/tmp/x").unwrap();
        cfg.set("segment.control_points=\"points.json\"").unwrap();
        assert_eq!(cfg.geometry.num_angles, 400);
        assert_eq!(cfg.phantom.inner_radius, 28.0);
        assert_eq!(cfg.segment.ga.seed, 9);
        assert_eq!(cfg.reconstruct.filter.kind, vunwrap_core::recon::FilterKind::Ramp);
        assert_eq!(cfg.output, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.segment.control_points, Some(PathBuf::from("points.json")));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.segment.smoothing = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.unwrap.band_halfwidth = 0.0;
        assert!(cfg.validate().is_err());
    }
}
