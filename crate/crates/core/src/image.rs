//! Dense 2-D raster of real samples.
//!
//! `Image2D` is the common carrier for phantom slices, projection frames,
//! reconstructions and unwrapped sheets. Pixels are addressed as
//! `(row, col)`; geometric code uses centred coordinates
//! `x = col - (cols - 1) / 2`, `y = row - (rows - 1) / 2`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    data: Array2<f64>,
}

impl Image2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            data: Array2::from_elem((rows, cols), value),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            data: Array2::from_shape_fn((rows, cols), |(r, c)| f(r, c)),
        }
    }

    pub fn from_array(data: Array2<f64>) -> Self {
        Self { data }
    }

    /// Builds an image from row-major samples.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Array2::from_shape_vec((rows, cols), values)
            .map(Self::from_array)
            .map_err(|e| Error::Shape(e.to_string()))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[[row, col]] = value;
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Row-major view of the samples.
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("Image2D storage is always standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data
            .as_slice_mut()
            .expect("Image2D storage is always standard layout")
    }

    /// Pixel-grid centre `(row, col)`.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.rows() as f64 - 1.0) / 2.0,
            (self.cols() as f64 - 1.0) / 2.0,
        )
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.mapv(f),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// Bilinear interpolation with zero extension outside the pixel grid.
    ///
    /// The image is treated as a continuous function that vanishes beyond the
    /// outermost pixel centres, which is the model the forward projector
    /// integrates.
    #[inline]
    pub fn sample_zero(&self, row: f64, col: f64) -> f64 {
        let (rows, cols) = self.dim();
        let r0 = row.floor();
        let c0 = col.floor();
        if r0 < -1.0 || c0 < -1.0 || r0 >= rows as f64 || c0 >= cols as f64 {
            return 0.0;
        }
        let fr = row - r0;
        let fc = col - c0;
        let r0 = r0 as isize;
        let c0 = c0 as isize;
        let px = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                0.0
            } else {
                self.data[[r as usize, c as usize]]
            }
        };
        let top = px(r0, c0) * (1.0 - fc) + px(r0, c0 + 1) * fc;
        let bottom = px(r0 + 1, c0) * (1.0 - fc) + px(r0 + 1, c0 + 1) * fc;
        top * (1.0 - fr) + bottom * fr
    }

    /// Bilinear interpolation inside the convex hull of pixel centres;
    /// `None` outside it.
    #[inline]
    pub fn sample(&self, row: f64, col: f64) -> Option<f64> {
        let (rows, cols) = self.dim();
        if !(row >= 0.0 && col >= 0.0 && row <= (rows - 1) as f64 && col <= (cols - 1) as f64) {
            return None;
        }
        let r0 = (row.floor() as usize).min(rows.saturating_sub(2));
        let c0 = (col.floor() as usize).min(cols.saturating_sub(2));
        let fr = row - r0 as f64;
        let fc = col - c0 as f64;
        let r1 = (r0 + 1).min(rows - 1);
        let c1 = (c0 + 1).min(cols - 1);
        let d = &self.data;
        let top = d[[r0, c0]] * (1.0 - fc) + d[[r0, c1]] * fc;
        let bottom = d[[r1, c0]] * (1.0 - fc) + d[[r1, c1]] * fc;
        Some(top * (1.0 - fr) + bottom * fr)
    }

    pub fn sample_or(&self, row: f64, col: f64, fill: f64) -> f64 {
        self.sample(row, col).unwrap_or(fill)
    }

    /// Linear-interpolated percentile, `q` in `[0, 100]`.
    pub fn percentile(&self, q: f64) -> f64 {
        percentile(self.data.iter().copied().collect(), q)
    }

    /// Affine map of the `[lo_q, hi_q]` percentile range onto `[0, 1]`,
    /// clamped, optionally inverted. Returns the image and the range used.
    pub fn normalized(&self, lo_q: f64, hi_q: f64, invert: bool) -> (Image2D, DisplayRange) {
        let lo = self.percentile(lo_q);
        let hi = self.percentile(hi_q);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = self.map(|v| {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            if invert {
                1.0 - t
            } else {
                t
            }
        });
        (img, DisplayRange { lo, hi, invert })
    }

    /// Separable Gaussian blur, kernel truncated at `3 sigma`, edges clamped.
    pub fn blurred(&self, sigma: f64) -> Image2D {
        if !(sigma > 0.0) {
            return self.clone();
        }
        let half = (3.0 * sigma).ceil() as i64;
        let mut kernel: Vec<f64> = (-half..=half)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= norm);
        let (rows, cols) = self.dim();
        let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
        let across = Image2D::from_fn(rows, cols, |r, c| {
            kernel
                .iter()
                .zip(-half..=half)
                .map(|(w, k)| w * self.get(r, clamp(c as i64 + k, cols)))
                .sum()
        });
        Image2D::from_fn(rows, cols, |r, c| {
            kernel
                .iter()
                .zip(-half..=half)
                .map(|(w, k)| w * across.get(clamp(r as i64 + k, rows), c))
                .sum()
        })
    }

    /// Rotated copy: `out(p)= self(src_center + R(-angle) (p - dst_center))`,
    /// i.e. content turns by `+angle` (counter-clockwise in `(x, y)`
    /// coordinates) and `src_center` lands on `dst_center`. Centres are
    /// `(row, col)`. Samples falling outside the source read `fill`.
    pub fn rotated(
        &self,
        angle: f64,
        src_center: (f64, f64),
        dst_center: (f64, f64),
        out_dim: (usize, usize),
        fill: f64,
    ) -> Image2D {
        let (sin, cos) = angle.sin_cos();
        Image2D::from_fn(out_dim.0, out_dim.1, |r, c| {
            let dy = r as f64 - dst_center.0;
            let dx = c as f64 - dst_center.1;
            let sx = cos * dx + sin * dy;
            let sy = -sin * dx + cos * dy;
            self.sample_or(src_center.0 + sy, src_center.1 + sx, fill)
        })
    }
}

/// Display normalisation parameters recorded alongside exported images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayRange {
    pub lo: f64,
    pub hi: f64,
    pub invert: bool,
}

pub(crate) fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let q = q.clamp(0.0, 100.0) / 100.0;
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let (_, lo_v, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_v = *lo_v;
    if hi == lo {
        return lo_v;
    }
    let hi_v = rest.iter().copied().fold(f64::INFINITY, f64::min);
    lo_v + (hi_v - lo_v) * (pos - lo as f64)
}
