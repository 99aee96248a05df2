//! Sheet segmentation on a reconstructed slice.
//!
//! A user (or the pipeline) places control points along one scroll layer; a
//! cubic smoothing spline through them, parametrised by chord length and
//! resampled at uniform arc length, is the segmented curve. A genetic
//! algorithm then nudges the control points so the curve rides the bright
//! ridge of the layer.

mod ga;
mod intersect;
mod spline;

use serde::{Deserialize, Serialize};

pub use ga::{optimize, optimize_per_slice, optimize_with, GAConfig, Generation, Optimized};
pub use intersect::first_self_intersection;
pub use spline::SmoothingSpline;

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::recon::ReconSlice;

/// Default arc-length spacing of path samples, pixels.
pub const SAMPLE_SPACING: f64 = 0.5;

/// Minimum distance between consecutive control points, pixels.
pub const MIN_POINT_GAP: f64 = 0.5;

/// Dense-table step used to invert arc length, pixels of chord.
const ARC_TABLE_STEP: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPoints {
    /// `(x, y)` = `(column, row)` in slice pixels, in path order.
    pub points: Vec<(f64, f64)>,
    #[serde(default)]
    pub closed: bool,
}

impl ControlPoints {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let cp = Self { points, closed: false };
        cp.validate()?;
        Ok(cp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.closed {
            return Err(Error::ControlPoints("a scroll spiral is an open curve".into()));
        }
        if self.points.len() < 4 {
            return Err(Error::ControlPoints(format!(
                "need at least 4 control points, got {}",
                self.points.len()
            )));
        }
        if let Some((i, _)) = self
            .points
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.0.is_finite() && p.1.is_finite()))
        {
            return Err(Error::ControlPoints(format!("point {i} is not finite")));
        }
        for (i, w) in self.points.windows(2).enumerate() {
            if (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1) <= MIN_POINT_GAP {
                return Err(Error::ControlPoints(format!(
                    "points {i} and {} are closer than {MIN_POINT_GAP} px",
                    i + 1
                )));
            }
        }
        if let Some(at) = first_self_intersection(&self.points) {
            return Err(Error::ControlPoints(format!(
                "control polyline crosses itself near ({:.2}, {:.2})",
                at.0, at.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralPath {
    pub control: ControlPoints,
    pub smoothing: f64,
    /// Arc-length step between samples, pixels.
    pub spacing: f64,
    pub samples: Vec<(f64, f64)>,
    pub arc_length: f64,
}

impl SpiralPath {
    /// Unit tangents by central differences of the samples.
    pub fn tangents(&self) -> Vec<(f64, f64)> {
        let s = &self.samples;
        let n = s.len();
        (0..n)
            .map(|i| {
                let a = s[i.saturating_sub(1)];
                let b = s[(i + 1).min(n - 1)];
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len = dx.hypot(dy);
                if len > 0.0 {
                    (dx / len, dy / len)
                } else {
                    (1.0, 0.0)
                }
            })
            .collect()
    }

    /// Unit normals pointing left of the direction of travel, `(t_y, -t_x)`
    /// in `(column, row)` coordinates with rows pointing down.
    pub fn normals(&self) -> Vec<(f64, f64)> {
        self.tangents().into_iter().map(|(tx, ty)| (ty, -tx)).collect()
    }
}

/// Spline fit plus resampling, with the self-intersection test reported
/// rather than raised.
pub(crate) fn fit_spline_unchecked(
    control: &ControlPoints,
    smoothing: f64,
    spacing: f64,
) -> Result<(SpiralPath, Option<(f64, f64)>)> {
    control.validate()?;
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(Error::Parameter(format!("smoothing {smoothing} outside [0, 1]")));
    }
    if !(spacing > 0.0) {
        return Err(Error::Parameter("sample spacing must be positive".into()));
    }
    let (knots, xs, ys) = extended_knots(&control.points);
    let sx = SmoothingSpline::fit(&knots, &xs, smoothing)?;
    let sy = SmoothingSpline::fit(&knots, &ys, smoothing)?;
    let (t_start, t_end) = (knots[1], knots[knots.len() - 2]);

    // Dense table of (parameter, cumulative arc length) over the real points.
    let steps = (((t_end - t_start) / ARC_TABLE_STEP).ceil() as usize).max(16);
    let mut table_t = Vec::with_capacity(steps + 1);
    let mut table_s = Vec::with_capacity(steps + 1);
    let mut prev = (sx.eval(t_start), sy.eval(t_start));
    let mut s = 0.0;
    table_t.push(t_start);
    table_s.push(0.0);
    for k in 1..=steps {
        let tk = t_start + (t_end - t_start) * k as f64 / steps as f64;
        let p = (sx.eval(tk), sy.eval(tk));
        s += (p.0 - prev.0).hypot(p.1 - prev.1);
        prev = p;
        table_t.push(tk);
        table_s.push(s);
    }
    let arc_length = s;
    let segments = ((arc_length / spacing).round() as usize).max(1);
    let step = arc_length / segments as f64;
    let mut samples = Vec::with_capacity(segments + 1);
    let mut idx = 0;
    for k in 0..=segments {
        let target = (k as f64 * step).min(arc_length);
        while idx + 1 < table_s.len() - 1 && table_s[idx + 1] < target {
            idx += 1;
        }
        let (s0, s1) = (table_s[idx], table_s[idx + 1]);
        let w = if s1 > s0 { ((target - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
        let tk = table_t[idx] + w * (table_t[idx + 1] - table_t[idx]);
        samples.push((sx.eval(tk), sy.eval(tk)));
    }
    let crossing = first_self_intersection(&samples);
    Ok((
        SpiralPath {
            control: control.clone(),
            smoothing,
            spacing: step,
            samples,
            arc_length,
        },
        crossing,
    ))
}

/// Chord-length knots with one extrapolated ghost point beyond each end.
///
/// Natural end conditions force zero curvature at the outermost knots; the
/// ghosts (quadratic extrapolation of the three end points) move that
/// constraint off the real curve, which is sampled between the original
/// end points only.
fn extended_knots(points: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = points.len();
    let dist = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0).hypot(b.1 - a.1);
    let ghost = |p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)| {
        // Quadratic through (0, p0), (h1, p1), (h1 + h2, p2), evaluated at -h1.
        let h1 = dist(p0, p1);
        let h2 = dist(p1, p2);
        let (t1, t2, t) = (h1, h1 + h2, -h1);
        let l0 = (t - t1) * (t - t2) / (t1 * t2);
        let l1 = t * (t - t2) / (t1 * (t1 - t2));
        let l2 = t * (t - t1) / (t2 * (t2 - t1));
        (
            (l0 * p0.0 + l1 * p1.0 + l2 * p2.0, l0 * p0.1 + l1 * p1.1 + l2 * p2.1),
            h1,
        )
    };
    let (head, h_head) = ghost(points[0], points[1], points[2]);
    let (tail, h_tail) = ghost(points[n - 1], points[n - 2], points[n - 3]);

    let mut knots = Vec::with_capacity(n + 2);
    let mut xs = Vec::with_capacity(n + 2);
    let mut ys = Vec::with_capacity(n + 2);
    knots.push(-h_head);
    xs.push(head.0);
    ys.push(head.1);
    let mut t = 0.0;
    for (i, &p) in points.iter().enumerate() {
        if i > 0 {
            t += dist(points[i - 1], p);
        }
        knots.push(t);
        xs.push(p.0);
        ys.push(p.1);
    }
    knots.push(t + h_tail);
    xs.push(tail.0);
    ys.push(tail.1);
    (knots, xs, ys)
}

/// Smoothing spline through `control` (per coordinate, chord-length
/// parameter), resampled every [`SAMPLE_SPACING`] of arc length. The step
/// is adjusted so samples land on both ends.
pub fn fit_spline(control: &ControlPoints, smoothing: f64) -> Result<SpiralPath> {
    fit_spline_spaced(control, smoothing, SAMPLE_SPACING)
}

pub fn fit_spline_spaced(control: &ControlPoints, smoothing: f64, spacing: f64) -> Result<SpiralPath> {
    let (path, crossing) = fit_spline_unchecked(control, smoothing, spacing)?;
    match crossing {
        Some(at) => Err(Error::SelfIntersection { at }),
        None => Ok(path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub value: f64,
    pub self_intersecting: bool,
    /// Samples that fell outside the slice.
    pub out_of_bounds: usize,
}

/// Penalty for a self-intersecting path: ten times the slice's largest
/// magnitude, or 1 on an all-zero slice.
pub fn intersection_penalty(slice: &Image2D) -> f64 {
    let m = 10.0 * slice.max_abs();
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Mean bilinear intensity along the samples, minus the intersection
/// penalty. Samples outside the slice read the slice minimum.
pub fn fitness(slice: &ReconSlice, path: &SpiralPath) -> Fitness {
    let crossing = first_self_intersection(&path.samples);
    fitness_of_samples(&slice.image, &path.samples, crossing.is_some())
}

pub(crate) fn fitness_of_samples(image: &Image2D, samples: &[(f64, f64)], self_intersecting: bool) -> Fitness {
    let floor = image.min();
    let mut sum = 0.0;
    let mut out = 0;
    for &(x, y) in samples {
        match image.sample(y, x) {
            Some(v) => sum += v,
            None => {
                sum += floor;
                out += 1;
            }
        }
    }
    let mut value = sum / samples.len().max(1) as f64;
    if self_intersecting {
        value -= intersection_penalty(image);
    }
    Fitness {
        value,
        self_intersecting,
        out_of_bounds: out,
    }
}
