//! Rotation-axis estimation from 180 degree projection pairs.
//!
//! A parallel-beam projection at `theta + pi` is the mirror image of the one
//! at `theta` about the rotation axis. Rectifying both frames with a trial
//! axis (centre column and in-plane tilt) and subtracting the mirrored
//! counterpart leaves a signed residual that vanishes only at the true axis.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::preprocess::{rectify_image, to_line_integral, Crop, ProjectionStack, RectifyParams};

/// Colour used by viewers for positive residuals.
pub const POSITIVE_HINT: &str = "red";
/// Colour used by viewers for negative residuals.
pub const NEGATIVE_HINT: &str = "green";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCalibration {
    /// Axis column in the raw frame, pixels.
    pub center_column: f64,
    /// In-plane axis tilt, radians.
    pub tilt: f64,
    /// Mean absolute difference at the optimum.
    pub residual: f64,
    /// First pair index used.
    pub pair_index: usize,
}

impl AxisCalibration {
    /// Rectification that undoes this calibration, without cropping.
    pub fn rectify_params(&self, rows: usize, cols: usize) -> RectifyParams {
        RectifyParams {
            center_column: self.center_column,
            tilt: self.tilt,
            crop: Crop::full(rows, cols),
        }
    }
}

/// `rectified(frame_i) - mirrored(rectified(frame_opposite))`, in line-integral units.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceImage {
    pub signed: Image2D,
    pub min: f64,
    pub max: f64,
}

impl DifferenceImage {
    fn new(signed: Image2D) -> Self {
        let (min, max) = (signed.min(), signed.max());
        Self { signed, min, max }
    }

    pub fn mean_abs(&self) -> f64 {
        mean_abs(&self.signed)
    }
}

/// Index whose angle is nearest `theta_i + pi`.
///
/// A full turn wraps modulo the range; shorter scans must contain the
/// counterpart within half an angle step.
pub fn opposite_index(i: usize, num_angles: usize, angle_range: f64) -> Result<usize> {
    if num_angles == 0 || !(angle_range > 0.0) {
        return Err(Error::Parameter("empty angle set".into()));
    }
    if i >= num_angles {
        return Err(Error::Range {
            what: "projection",
            index: i,
            len: num_angles,
        });
    }
    let step = angle_range / num_angles as f64;
    if angle_range < PI - 1e-9 {
        return Err(Error::Geometry(format!(
            "angle range {angle_range:.4} rad has no 180 degree counterparts"
        )));
    }
    let target = i as f64 * step + PI;
    if angle_range >= TAU - step / 2.0 {
        let k = (target / step).round() as i64;
        return Ok(k.rem_euclid(num_angles as i64) as usize);
    }
    let k = (target / step).round();
    if k > (num_angles - 1) as f64 {
        return Err(Error::Geometry(format!(
            "projection {i} has no counterpart within {angle_range:.4} rad"
        )));
    }
    Ok(k as usize)
}

/// Flips columns about the central column; an involution.
pub fn mirror_columns(image: &Image2D) -> Image2D {
    let cols = image.cols();
    Image2D::from_fn(image.rows(), cols, |r, c| image.get(r, cols - 1 - c))
}

/// Signed residual of pair `(i, opposite(i))` under `params`.
pub fn difference_image(
    stack: &ProjectionStack,
    i: usize,
    params: &RectifyParams,
) -> Result<DifferenceImage> {
    let g = &stack.geometry;
    let j = opposite_index(i, g.num_angles, g.angle_range)?;
    let a = line_integral_frame(stack, i)?;
    let b = line_integral_frame(stack, j)?;
    Ok(DifferenceImage::new(pair_difference(&a, &b, params)?))
}

fn line_integral_frame(stack: &ProjectionStack, i: usize) -> Result<Image2D> {
    to_line_integral(&stack.frames[i].data, stack.i0_estimate)
}

fn pair_difference(a: &Image2D, b: &Image2D, params: &RectifyParams) -> Result<Image2D> {
    let ra = rectify_image(a, params, 0.0)?;
    let rb = mirror_columns(&rectify_image(b, params, 0.0)?);
    let mut out = ra;
    for (o, v) in out.as_slice_mut().iter_mut().zip(rb.as_slice()) {
        *o -= v;
    }
    Ok(out)
}

fn mean_abs(img: &Image2D) -> f64 {
    img.as_slice().iter().map(|v| v.abs()).sum::<f64>() / img.as_slice().len() as f64
}

/// Gaussian pre-smoothing of the frames inside [`find_axis_in`], pixels.
pub const OBJECTIVE_BLUR: f64 = 1.0;

/// Search box and stopping tolerances for [`find_axis_in`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchBox {
    /// Half-width of the centre search around the frame centre, pixels.
    pub center_range: f64,
    pub center_step: f64,
    /// Half-width of the tilt search, radians.
    pub tilt_range: f64,
    pub tilt_step: f64,
    pub center_tolerance: f64,
    pub tilt_tolerance: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self {
            center_range: 15.0,
            center_step: 1.0,
            tilt_range: 2f64.to_radians(),
            tilt_step: 0.25f64.to_radians(),
            center_tolerance: 0.05,
            tilt_tolerance: 0.02f64.to_radians(),
        }
    }
}

/// Evenly spaced pair indices across the angles that have counterparts.
pub fn pair_indices(num_angles: usize, angle_range: f64, pairs: usize) -> Result<Vec<usize>> {
    if pairs == 0 {
        return Err(Error::Parameter("pairs must be at least 1".into()));
    }
    let step = angle_range / num_angles as f64;
    let span = if angle_range >= TAU - step / 2.0 {
        PI
    } else {
        angle_range - PI + step / 2.0
    };
    let usable = ((span / step + 1e-9).floor() as usize).clamp(1, num_angles);
    let mut out: Vec<usize> = (0..pairs).map(|k| k * usable / pairs).collect();
    out.dedup();
    for &i in &out {
        opposite_index(i, num_angles, angle_range)?;
    }
    Ok(out)
}

/// [`find_axis_in`] with the default search box.
pub fn find_axis(stack: &ProjectionStack, pairs: usize) -> Result<AxisCalibration> {
    find_axis_in(stack, pairs, &SearchBox::default())
}

/// Minimises the mean absolute pair difference over centre and tilt: a
/// coarse grid over the search box, then golden-section refinement of each
/// coordinate in turn.
pub fn find_axis_in(stack: &ProjectionStack, pairs: usize, search: &SearchBox) -> Result<AxisCalibration> {
    let g = &stack.geometry;
    let indices = pair_indices(g.num_angles, g.angle_range, pairs)?;
    let mut frames = Vec::with_capacity(indices.len());
    for &i in &indices {
        let j = opposite_index(i, g.num_angles, g.angle_range)?;
        frames.push((
            line_integral_frame(stack, i)?.blurred(OBJECTIVE_BLUR),
            line_integral_frame(stack, j)?.blurred(OBJECTIVE_BLUR),
        ));
    }
    let (rows, cols) = stack.frame_dim();
    let base = (cols as f64 - 1.0) / 2.0;
    let objective = |center: f64, tilt: f64| -> Result<f64> {
        let params = RectifyParams {
            center_column: center,
            tilt,
            crop: Crop::full(rows, cols),
        };
        let mut total = 0.0;
        for (a, b) in &frames {
            total += mean_abs(&pair_difference(a, b, &params)?);
        }
        Ok(total / frames.len() as f64)
    };

    let nc = (search.center_range / search.center_step).round() as i64;
    let nt = (search.tilt_range / search.tilt_step).round() as i64;
    let grid: Vec<(i64, i64)> = (-nc..=nc).flat_map(|c| (-nt..=nt).map(move |t| (c, t))).collect();
    let scores: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&(c, t)| objective(base + c as f64 * search.center_step, t as f64 * search.tilt_step))
        .collect();
    let mut best = (0, 0, f64::INFINITY);
    for (&(c, t), score) in grid.iter().zip(scores) {
        let score = score?;
        if score < best.2 {
            best = (c, t, score);
        }
    }
    let (bc, bt, _) = best;
    if bc.abs() == nc || (nt > 0 && bt.abs() == nt) {
        return Err(Error::CalibrationFailed(format!(
            "coarse optimum at the search-box edge (centre {:+.1} px, tilt {:+.2} deg)",
            bc as f64 * search.center_step,
            (bt as f64 * search.tilt_step).to_degrees()
        )));
    }

    let mut center = base + bc as f64 * search.center_step;
    let mut tilt = bt as f64 * search.tilt_step;
    // Two alternating sweeps settle the weak coupling between the coordinates.
    for _ in 0..2 {
        center = golden_section(
            |c| objective(c, tilt),
            center - search.center_step,
            center + search.center_step,
            search.center_tolerance,
        )?;
        if nt > 0 {
            tilt = golden_section(
                |t| objective(center, t),
                tilt - search.tilt_step,
                tilt + search.tilt_step,
                search.tilt_tolerance,
            )?;
        }
    }
    Ok(AxisCalibration {
        center_column: center,
        tilt,
        residual: objective(center, tilt)?,
        pair_index: indices[0],
    })
}

/// Minimiser of a unimodal `f` on `[lo, hi]` to within `tol`.
fn golden_section(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { x1 } else { x2 })
}
