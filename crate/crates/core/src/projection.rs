//! Parallel-beam forward model.
//!
//! `radon` integrates a slice along the lines `x cos(theta) + y sin(theta) = s`
//! (centred pixel coordinates, `y` pointing down the rows) with a fixed
//! half-pixel step over the bilinear interpolant. `attenuate` turns line
//! integrals into detector intensities via Beer-Lambert, and
//! `acquire_volume` simulates the full stack of camera frames for a phantom.

use std::f64::consts::TAU;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::phantom::{PhantomSpec, SheetRaster, TextTexture};

/// Quadrature step along each ray, pixels.
pub const RAY_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub num_angles: usize,
    /// Radians covered by the angle set; angles are `i * angle_range / num_angles`.
    pub angle_range: f64,
    pub num_detectors: usize,
    /// Pixels per detector bin.
    pub detector_spacing: f64,
    /// Ground-truth rotation-axis displacement from the detector centre, pixels.
    #[serde(default)]
    pub center_offset: f64,
    /// Ground-truth in-plane tilt of the rotation axis on the detector, radians.
    #[serde(default)]
    pub tilt: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            num_angles: 800,
            angle_range: TAU,
            num_detectors: 288,
            detector_spacing: 1.0,
            center_offset: 0.0,
            tilt: 0.0,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.num_angles == 0 || self.num_detectors == 0 {
            return Err(Error::Parameter(
                "num_angles and num_detectors must be at least 1".into(),
            ));
        }
        if !(self.detector_spacing > 0.0 && self.detector_spacing.is_finite()) {
            return Err(Error::Parameter("detector_spacing must be positive".into()));
        }
        if !(self.angle_range > 0.0 && self.angle_range.is_finite()) {
            return Err(Error::Parameter("angle_range must be positive".into()));
        }
        if !self.center_offset.is_finite() || !self.tilt.is_finite() {
            return Err(Error::Parameter("center_offset and tilt must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn angle_step(&self) -> f64 {
        self.angle_range / self.num_angles as f64
    }

    #[inline]
    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * self.angle_step()
    }

    /// Signed distance of detector `j` from the detector centre.
    #[inline]
    pub fn detector_position(&self, j: usize) -> f64 {
        (j as f64 - (self.num_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    /// Column at which the rotation axis appears on the detector.
    pub fn axis_column(&self) -> f64 {
        (self.num_detectors as f64 - 1.0) / 2.0 + self.center_offset / self.detector_spacing
    }
}

/// Projection data `p(s_j, theta_i)`, rows are angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub data: Array2<f64>,
    pub geometry: Geometry,
}

impl Sinogram {
    pub fn new(data: Array2<f64>, geometry: Geometry) -> Result<Self> {
        geometry.validate()?;
        if data.dim() != (geometry.num_angles, geometry.num_detectors) {
            return Err(Error::Shape(format!(
                "sinogram data {:?} does not match geometry ({}, {})",
                data.dim(),
                geometry.num_angles,
                geometry.num_detectors
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("sinogram contains non-finite values".into()));
        }
        Ok(Self { data, geometry })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Self {
            data: Array2::zeros((geometry.num_angles, geometry.num_detectors)),
            geometry,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: &self.data * factor,
            geometry: self.geometry,
        }
    }
}

/// Radon transform of a square slice.
pub fn radon(slice: &Image2D, geometry: &Geometry) -> Result<Sinogram> {
    geometry.validate()?;
    if !slice.is_square() {
        return Err(Error::Shape(format!(
            "radon needs a square slice, got {:?}",
            slice.dim()
        )));
    }
    let (cy, cx) = slice.center();
    let Some(support) = support_radius(slice) else {
        return Ok(Sinogram::zeros(*geometry));
    };

    let mut data = Array2::zeros((geometry.num_angles, geometry.num_detectors));
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let (sin, cos) = geometry.angle(i).sin_cos();
            for (j, out) in row.iter_mut().enumerate() {
                let s = geometry.detector_position(j) - geometry.center_offset;
                if s.abs() >= support {
                    continue;
                }
                let half = (support * support - s * s).sqrt();
                let k_max = (half / RAY_STEP).floor() as i64;
                // Start of the ray and per-step increment in pixel coordinates.
                let (x0, y0) = (cx + s * cos, cy + s * sin);
                let (dx, dy) = (-sin * RAY_STEP, cos * RAY_STEP);
                let mut acc = 0.0;
                for k in -k_max..=k_max {
                    let t = k as f64;
                    acc += slice.sample_zero(y0 + t * dy, x0 + t * dx);
                }
                *out = acc * RAY_STEP;
            }
        });
    Ok(Sinogram {
        data,
        geometry: *geometry,
    })
}

/// Radius around the slice centre beyond which the bilinear interpolant
/// vanishes; `None` for an all-zero slice.
fn support_radius(slice: &Image2D) -> Option<f64> {
    let (cy, cx) = slice.center();
    let mut r2_max: Option<f64> = None;
    for ((r, c), &v) in slice.array().indexed_iter() {
        if v != 0.0 {
            let r2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            r2_max = Some(r2_max.map_or(r2, |m: f64| m.max(r2)));
        }
    }
    r2_max.map(|r2| r2.sqrt() + std::f64::consts::SQRT_2 + RAY_STEP)
}

/// Detector intensities with their source intensity `I_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub data: Image2D,
    pub i0: f64,
}

/// Additive Gaussian detector noise, `sd` relative to `I_0`.
///
/// Draws are keyed by `(seed, angle, slice)` through independent ChaCha
/// streams, so results do not depend on how work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sd: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sd: 0.0, seed: 0 };

    pub fn new(sd: f64, seed: u64) -> Self {
        Self { sd, seed }
    }

    fn rng(&self, angle: usize, slice: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((angle as u64) << 32) | slice as u64);
        rng
    }

    /// `i0 * exp(-p)` plus noise, clamped to `(0, i0]`.
    fn expose(&self, line_integrals: &[f64], out: &mut [f64], i0: f64, angle: usize, slice: usize) {
        let floor = i0 * f64::EPSILON;
        let mut rng = (self.sd > 0.0).then(|| self.rng(angle, slice));
        for (o, &p) in out.iter_mut().zip(line_integrals) {
            let mut v = i0 * (-p).exp();
            if let Some(rng) = rng.as_mut() {
                let z: f64 = StandardNormal.sample(rng);
                v += z * self.sd * i0;
            }
            *o = v.clamp(floor, i0);
        }
    }
}

/// Beer-Lambert exposure of one slice's sinogram; output rows are angles.
pub fn attenuate(sino: &Sinogram, i0: f64, noise: NoiseModel, slice: usize) -> Result<IntensityFrame> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::Parameter("i0 must be positive".into()));
    }
    if !(noise.sd >= 0.0 && noise.sd.is_finite()) {
        return Err(Error::Parameter("noise sd must be non-negative".into()));
    }
    let (na, nd) = sino.data.dim();
    let mut out = Image2D::zeros(na, nd);
    for i in 0..na {
        let row = sino.data.row(i);
        let p = row.as_slice().expect("sinogram rows are contiguous");
        let dst = &mut out.as_slice_mut()[i * nd..(i + 1) * nd];
        noise.expose(p, dst, i0, i, slice);
    }
    Ok(IntensityFrame { data: out, i0 })
}

/// Acquisition settings beyond the ray geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Acquisition {
    pub i0: f64,
    pub noise: NoiseModel,
    /// Unobstructed detector rows above and below the sheet.
    pub row_margin: usize,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self {
            i0: 1.0,
            noise: NoiseModel::NONE,
            row_margin: 8,
        }
    }
}

/// Simulated camera frames, one per angle. Frame rows are detector rows:
/// the sheet occupies rows `row_margin .. row_margin + sheet_height_px`.
pub fn acquire_volume(
    spec: &PhantomSpec,
    texture: &TextTexture,
    geometry: &Geometry,
    acquisition: &Acquisition,
) -> Result<Vec<IntensityFrame>> {
    geometry.validate()?;
    let raster = SheetRaster::new(spec)?;
    let i0 = acquisition.i0;
    let margin = acquisition.row_margin;
    let rows = spec.sheet_height_px + 2 * margin;
    let nd = geometry.num_detectors;
    // Frames are rendered untilted; the tilt is applied as a camera roll below.
    let mut straight = *geometry;
    straight.tilt = 0.0;

    let mut frames: Vec<Image2D> = (0..geometry.num_angles)
        .map(|_| Image2D::filled(rows, nd, i0))
        .collect();

    let chunk = rayon::current_num_threads().max(1) * 2;
    let slices: Vec<usize> = (0..spec.sheet_height_px).collect();
    for zs in slices.chunks(chunk) {
        let exposed: Vec<Result<IntensityFrame>> = zs
            .par_iter()
            .map(|&z| {
                let sino = radon(&raster.slice(texture, z)?, &straight)?;
                attenuate(&sino, i0, acquisition.noise, z)
            })
            .collect();
        for (&z, frame) in zs.iter().zip(exposed) {
            let frame = frame?;
            for (i, dst) in frames.iter_mut().enumerate() {
                let src = &frame.data.as_slice()[i * nd..(i + 1) * nd];
                dst.as_slice_mut()[(margin + z) * nd..(margin + z + 1) * nd].copy_from_slice(src);
            }
        }
    }

    if geometry.tilt != 0.0 {
        let pivot = ((rows as f64 - 1.0) / 2.0, geometry.axis_column());
        frames = frames
            .into_par_iter()
            .map(|f| f.rotated(geometry.tilt, pivot, pivot, (rows, nd), i0))
            .collect();
    }

    Ok(frames
        .into_iter()
        .map(|data| IntensityFrame { data, i0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(num_angles: usize, num_detectors: usize) -> Geometry {
        Geometry {
            num_angles,
            num_detectors,
            ..Geometry::default()
        }
    }

    #[test]
    fn zero_image_gives_zero_sinogram() {
        let sino = radon(&Image2D::zeros(32, 32), &geom(10, 40)).unwrap();
        assert!(sino.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_square_slice_rejected() {
        assert!(matches!(
            radon(&Image2D::zeros(8, 9), &geom(4, 8)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn impulse_traces_a_sinusoid() {
        let n = 65;
        let mut img = Image2D::zeros(n, n);
        let (x0, y0) = (10.0, -6.0);
        img.set((32.0 + y0) as usize, (32.0 + x0) as usize, 1.0);
        let g = geom(90, 81);
        let sino = radon(&img, &g).unwrap();
        for i in 0..g.num_angles {
            let th = g.angle(i);
            let s_true = x0 * th.cos() + y0 * th.sin();
            let row = sino.data.row(i);
            let (jmax, _) = row
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
            assert!((g.detector_position(jmax) - s_true).abs() <= 1.0, "angle {i}");
            // All mass within one bin of the sinusoid.
            for (j, &v) in row.iter().enumerate() {
                if (g.detector_position(j) - s_true).abs() > 2.0 {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn center_offset_shifts_detector_axis() {
        let n = 33;
        let mut img = Image2D::zeros(n, n);
        img.set(16, 16, 1.0);
        let mut g = geom(4, 41);
        g.center_offset = 3.0;
        let sino = radon(&img, &g).unwrap();
        for i in 0..4 {
            let row = sino.data.row(i);
            let j = row.iter().enumerate().fold((0, f64::MIN), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0;
            assert_eq!(j, 20 + 3);
        }
    }

    #[test]
    fn attenuate_exponential() {
        let g = geom(1, 3);
        let mut data = Array2::zeros((1, 3));
        data[[0, 1]] = 1.0;
        let sino = Sinogram::new(data, g).unwrap();
        let f = attenuate(&sino, 2.0, NoiseModel::NONE, 0).unwrap();
        assert_eq!(f.data.get(0, 0), 2.0);
        assert!((f.data.get(0, 1) - 2.0 / std::f64::consts::E).abs() < 1e-15);
        assert!(attenuate(&sino, 0.0, NoiseModel::NONE, 0).is_err());
    }

    #[test]
    fn noise_is_reproducible_and_clamped() {
        let g = geom(5, 50);
        let sino = Sinogram::zeros(g);
        let noise = NoiseModel::new(0.05, 7);
        let a = attenuate(&sino, 1.0, noise, 3).unwrap();
        let b = attenuate(&sino, 1.0, noise, 3).unwrap();
        let c = attenuate(&sino, 1.0, noise, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data.as_slice().iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(a.data.min() < 1.0);
    }
}
