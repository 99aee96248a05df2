//! Raw frames to per-slice line-integral sinograms.
//!
//! Frames are rectified (rotate about the estimated axis, shift the axis to
//! the central column, crop) and log-converted against the source intensity.

use std::f64::consts::FRAC_PI_8;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{percentile, Image2D};
use crate::projection::{Geometry, IntensityFrame, Sinogram};

/// Floor applied to `I / I_0` before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-6;

/// Percentile of all frame intensities used as the `I_0` estimate.
pub const I0_PERCENTILE: f64 = 99.5;

#[derive(Debug, Clone)]
pub struct ProjectionStack {
    pub frames: Vec<IntensityFrame>,
    pub geometry: Geometry,
    pub i0_estimate: f64,
}

impl ProjectionStack {
    /// Builds a stack and estimates `I_0` from the brightest pixels.
    pub fn new(frames: Vec<IntensityFrame>, geometry: Geometry) -> Result<Self> {
        let i0 = estimate_i0(&frames);
        Self::with_i0(frames, geometry, i0)
    }

    pub fn with_i0(frames: Vec<IntensityFrame>, geometry: Geometry, i0_estimate: f64) -> Result<Self> {
        geometry.validate()?;
        if frames.len() != geometry.num_angles {
            return Err(Error::Shape(format!(
                "{} frames for {} angles",
                frames.len(),
                geometry.num_angles
            )));
        }
        let dim = frames[0].data.dim();
        if frames.iter().any(|f| f.data.dim() != dim) {
            return Err(Error::Shape("frames differ in size".into()));
        }
        if dim.1 != geometry.num_detectors {
            return Err(Error::Shape(format!(
                "frames are {} columns wide, geometry has {} detectors",
                dim.1, geometry.num_detectors
            )));
        }
        if !(i0_estimate > 0.0 && i0_estimate.is_finite()) {
            return Err(Error::Parameter("i0 estimate must be positive".into()));
        }
        Ok(Self {
            frames,
            geometry,
            i0_estimate,
        })
    }

    /// `(rows, cols)` of every frame.
    pub fn frame_dim(&self) -> (usize, usize) {
        self.frames[0].data.dim()
    }
}

/// 99.5th percentile over all frame pixels.
pub fn estimate_i0(frames: &[IntensityFrame]) -> f64 {
    let all: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.data.as_slice().iter().copied())
        .collect();
    percentile(all, I0_PERCENTILE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Crop {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            row0: 0,
            col0: 0,
            rows,
            cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifyParams {
    /// Column of the rotation axis in the raw frame.
    pub center_column: f64,
    /// In-plane axis tilt to undo, radians.
    pub tilt: f64,
    pub crop: Crop,
}

impl RectifyParams {
    /// Axis at the frame centre, no tilt, no crop.
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            center_column: (cols as f64 - 1.0) / 2.0,
            tilt: 0.0,
            crop: Crop::full(rows, cols),
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let c = &self.crop;
        if c.rows == 0 || c.cols == 0 || c.row0 + c.rows > rows || c.col0 + c.cols > cols {
            return Err(Error::Parameter(format!(
                "crop {c:?} outside {rows}x{cols} frame"
            )));
        }
        if !(self.tilt.abs() < FRAC_PI_8) {
            return Err(Error::Parameter(format!(
                "tilt {} rad outside (-pi/8, pi/8)",
                self.tilt
            )));
        }
        if !(self.center_column >= 0.0 && self.center_column <= (cols as f64 - 1.0)) {
            return Err(Error::Parameter(format!(
                "center_column {} outside frame columns 0..{cols}",
                self.center_column
            )));
        }
        Ok(())
    }
}

/// `p = -ln(max(I, eps * I_0) / I_0)`, clamped at 0 from below.
pub fn to_line_integral(frame: &Image2D, i0: f64) -> Result<Image2D> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::Parameter("i0 must be positive".into()));
    }
    Ok(frame.map(|v| line_integral(v, i0)))
}

#[inline]
fn line_integral(intensity: f64, i0: f64) -> f64 {
    let ratio = (intensity / i0).max(LOG_FLOOR);
    (-ratio.ln()).max(0.0)
}

/// Sampler that maps rectified output pixels back into a raw frame.
struct Rectifier {
    params: RectifyParams,
    sin: f64,
    cos: f64,
    center_row: f64,
    center_col_out: f64,
}

impl Rectifier {
    fn new(params: &RectifyParams, rows: usize, cols: usize) -> Result<Self> {
        params.validate(rows, cols)?;
        let (sin, cos) = params.tilt.sin_cos();
        Ok(Self {
            params: *params,
            sin,
            cos,
            center_row: (rows as f64 - 1.0) / 2.0,
            center_col_out: (cols as f64 - 1.0) / 2.0,
        })
    }

    /// Row `r` of the cropped output into `out`.
    fn row(&self, image: &Image2D, fill: f64, r: usize, out: &mut [f64]) {
        let crop = self.params.crop;
        let dy = (r + crop.row0) as f64 - self.center_row;
        for (c, o) in out.iter_mut().enumerate() {
            let dx = (c + crop.col0) as f64 - self.center_col_out;
            let sx = self.cos * dx - self.sin * dy;
            let sy = self.sin * dx + self.cos * dy;
            *o = image.sample_or(self.center_row + sy, self.params.center_column + sx, fill);
        }
    }
}

/// Rotates by `-tilt` about the axis, moves the axis to the central column,
/// then crops. Pixels pulled from outside the frame read `I_0`.
pub fn rectify(frame: &IntensityFrame, params: &RectifyParams) -> Result<IntensityFrame> {
    Ok(IntensityFrame {
        data: rectify_image(&frame.data, params, frame.i0)?,
        i0: frame.i0,
    })
}

/// [`rectify`] for any image; pixels from outside read `fill`.
pub fn rectify_image(image: &Image2D, params: &RectifyParams, fill: f64) -> Result<Image2D> {
    let (rows, cols) = image.dim();
    let rect = Rectifier::new(params, rows, cols)?;
    let mut out = Image2D::zeros(params.crop.rows, params.crop.cols);
    let w = params.crop.cols;
    for r in 0..params.crop.rows {
        rect.row(image, fill, r, &mut out.as_slice_mut()[r * w..(r + 1) * w]);
    }
    Ok(out)
}

/// Sinogram of rectified row `z` (crop coordinates) across all frames.
pub fn extract_slice_sinogram(
    stack: &ProjectionStack,
    params: &RectifyParams,
    z: usize,
) -> Result<Sinogram> {
    let (rows, cols) = stack.frame_dim();
    let rect = Rectifier::new(params, rows, cols)?;
    if z >= params.crop.rows {
        return Err(Error::Range {
            what: "slice row",
            index: z,
            len: params.crop.rows,
        });
    }
    let w = params.crop.cols;
    let i0 = stack.i0_estimate;
    let mut data = Array2::zeros((stack.frames.len(), w));
    let mut buf = vec![0.0; w];
    for (i, frame) in stack.frames.iter().enumerate() {
        rect.row(&frame.data, frame.i0, z, &mut buf);
        for (dst, &v) in data.row_mut(i).iter_mut().zip(&buf) {
            *dst = line_integral(v, i0);
        }
    }
    let geometry = Geometry {
        num_detectors: w,
        center_offset: 0.0,
        tilt: 0.0,
        ..stack.geometry
    };
    Sinogram::new(data, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: usize, cols: usize) -> IntensityFrame {
        IntensityFrame {
            data: Image2D::from_fn(rows, cols, |r, c| 0.1 + 0.01 * (r * cols + c) as f64),
            i0: 10.0,
        }
    }

    #[test]
    fn line_integral_examples() {
        let i0 = 3.0;
        let img = Image2D::from_vec(1, 3, vec![i0, i0 * (-2.0f64).exp(), 0.0]).unwrap();
        let p = to_line_integral(&img, i0).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert!((p.get(0, 1) - 2.0).abs() < 1e-12);
        assert!((p.get(0, 2) + LOG_FLOOR.ln()).abs() < 1e-12);
        assert!((p.get(0, 2) - 13.8155).abs() < 1e-3);
        assert!(matches!(to_line_integral(&img, 0.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn overshoot_clamps_to_zero() {
        let img = Image2D::filled(1, 1, 1.2);
        assert_eq!(to_line_integral(&img, 1.0).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn identity_rectify_is_exact() {
        let f = frame(7, 9);
        let out = rectify(&f, &RectifyParams::identity(7, 9)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn integer_shift_is_exact() {
        let f = frame(5, 12);
        let k = 3;
        let mut p = RectifyParams::identity(5, 12);
        p.center_column += k as f64;
        let out = rectify(&f, &p).unwrap();
        for r in 0..5 {
            for c in 0..12 - k {
                assert_eq!(out.data.get(r, c), f.data.get(r, c + k));
            }
            for c in 12 - k..12 {
                assert_eq!(out.data.get(r, c), f.i0);
            }
        }
    }

    #[test]
    fn crop_selects_window_and_validates() {
        let f = frame(6, 8);
        let mut p = RectifyParams::identity(6, 8);
        p.crop = Crop {
            row0: 1,
            col0: 2,
            rows: 3,
            cols: 4,
        };
        let out = rectify(&f, &p).unwrap();
        assert_eq!(out.data.dim(), (3, 4));
        assert_eq!(out.data.get(0, 0), f.data.get(1, 2));
        p.crop.cols = 7;
        assert!(matches!(rectify(&f, &p), Err(Error::Parameter(_))));
        let mut p = RectifyParams::identity(6, 8);
        p.tilt = 0.5;
        assert!(rectify(&f, &p).is_err());
    }

    #[test]
    fn rotation_round_trip_interior() {
        // Smooth content so bilinear resampling error stays small.
        let f = IntensityFrame {
            data: Image2D::from_fn(41, 41, |r, c| {
                let (x, y) = (c as f64 - 20.0, r as f64 - 20.0);
                1.0 + 0.5 * (-(x * x + y * y) / 800.0).exp() + 0.002 * x
            }),
            i0: 2.0,
        };
        let t = 3f64.to_radians();
        let mut p = RectifyParams::identity(41, 41);
        p.tilt = t;
        let once = rectify(&f, &p).unwrap();
        p.tilt = -t;
        let back = rectify(&once, &p).unwrap();
        for r in 8..33 {
            for c in 8..33 {
                assert!((back.data.get(r, c) - f.data.get(r, c)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn extract_single_angle_stack() {
        let g = Geometry {
            num_angles: 1,
            num_detectors: 6,
            ..Geometry::default()
        };
        let f = IntensityFrame {
            data: Image2D::filled(4, 6, 0.5),
            i0: 1.0,
        };
        let stack = ProjectionStack::with_i0(vec![f], g, 1.0).unwrap();
        let s = extract_slice_sinogram(&stack, &RectifyParams::identity(4, 6), 2).unwrap();
        assert_eq!(s.data.dim(), (1, 6));
        assert!((s.data[[0, 3]] - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(
            extract_slice_sinogram(&stack, &RectifyParams::identity(4, 6), 4),
            Err(Error::Range { .. })
        ));
    }
}
