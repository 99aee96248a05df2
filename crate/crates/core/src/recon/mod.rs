//! Filtered back-projection and slice post-processing.
//!
//! Discrete normalisation: with `q = IFFT(|sigma| FFT(p))` (sigma in cycles
//! per bin) and `B` the `delta-theta`-weighted back-projection,
//! `f = pi / (angle_range * detector_spacing) * B(q)`. For full 2pi coverage
//! that is half the back-projected sum, which is the continuous `1 / (4 pi)`
//! constant once it is re-expressed in cycles rather than radians.

mod backproject;
mod filter;
mod fourier_slice;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use backproject::back_project;
pub use filter::{apply_filter, dft_frequency, padded_len, FilterKind, FilterSpec, NYQUIST};
pub use fourier_slice::fourier_slice_check;

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::projection::{Geometry, Sinogram};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconSlice {
    pub image: Image2D,
    pub geometry: Geometry,
    pub filter: FilterSpec,
}

/// Reconstructs one `grid_size x grid_size` slice.
pub fn fbp(sino: &Sinogram, grid_size: usize, filter: &FilterSpec) -> Result<ReconSlice> {
    let g = &sino.geometry;
    if g.angle_range < PI - 1e-9 {
        return Err(Error::Geometry(format!(
            "FBP needs at least pi of angular coverage, got {:.4} rad",
            g.angle_range
        )));
    }
    let filtered = apply_filter(sino, filter)?;
    let mut image = back_project(&filtered, grid_size)?;
    let scale = PI / (g.angle_range * g.detector_spacing);
    image.as_slice_mut().iter_mut().for_each(|v| *v *= scale);
    Ok(ReconSlice {
        image,
        geometry: *g,
        filter: *filter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub inner_radius: f64,
    pub outer_radius: f64,
}

/// Fraction of the slice maximum that counts as "scroll" when sizing a mask.
const EXTENT_THRESHOLD: f64 = 0.25;

impl MaskSpec {
    pub fn validate(&self, grid_size: usize) -> Result<()> {
        if !(self.inner_radius >= 0.0
            && self.outer_radius > self.inner_radius
            && self.outer_radius <= grid_size as f64 / 2.0)
        {
            return Err(Error::Parameter(format!(
                "mask radii ({}, {}) invalid for grid {grid_size}",
                self.inner_radius, self.outer_radius
            )));
        }
        Ok(())
    }

    /// Outer radius at 1.05x the farthest pixel above a quarter of the
    /// slice maximum, capped at the inscribed circle.
    pub fn from_extent(slice: &Image2D, inner_radius: f64) -> MaskSpec {
        let (cy, cx) = slice.center();
        let thresh = EXTENT_THRESHOLD * slice.max();
        let mut far: f64 = 0.0;
        for ((r, c), &v) in slice.array().indexed_iter() {
            if v > thresh {
                far = far.max((r as f64 - cy).hypot(c as f64 - cx));
            }
        }
        let half = slice.rows().min(slice.cols()) as f64 / 2.0;
        MaskSpec {
            inner_radius,
            outer_radius: (1.05 * far).clamp(inner_radius + 1.0, half),
        }
    }
}

/// Zeroes everything outside the annulus `inner <= r <= outer`.
pub fn apply_mask(slice: &ReconSlice, mask: &MaskSpec) -> Result<ReconSlice> {
    mask.validate(slice.image.rows().min(slice.image.cols()))?;
    let (cy, cx) = slice.image.center();
    let mut out = slice.clone();
    for ((r, c), v) in out.image.array_mut().indexed_iter_mut() {
        let rho = (r as f64 - cy).hypot(c as f64 - cx);
        if rho < mask.inner_radius || rho > mask.outer_radius {
            *v = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(img: Image2D) -> ReconSlice {
        ReconSlice {
            image: img,
            geometry: Geometry::default(),
            filter: FilterSpec::default(),
        }
    }

    #[test]
    fn zero_sinogram_reconstructs_zero() {
        let g = Geometry {
            num_angles: 30,
            num_detectors: 40,
            ..Geometry::default()
        };
        let r = fbp(&Sinogram::zeros(g), 32, &FilterSpec::default()).unwrap();
        assert!(r.image.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_scan_rejected() {
        let g = Geometry {
            num_angles: 30,
            num_detectors: 40,
            angle_range: 2.0,
            ..Geometry::default()
        };
        assert!(matches!(
            fbp(&Sinogram::zeros(g), 32, &FilterSpec::default()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn full_mask_only_clears_corners() {
        let s = slice(Image2D::filled(32, 32, 1.0));
        let m = apply_mask(&s, &MaskSpec { inner_radius: 0.0, outer_radius: 16.0 }).unwrap();
        assert_eq!(m.image.get(16, 16), 1.0);
        assert_eq!(m.image.get(0, 16), 1.0); // r = 15.5
        assert_eq!(m.image.get(0, 0), 0.0);
    }

    #[test]
    fn thin_annulus_preserved_exactly() {
        let s = slice(Image2D::from_fn(33, 33, |r, c| (r * 33 + c) as f64));
        let m = apply_mask(&s, &MaskSpec { inner_radius: 9.9, outer_radius: 10.0 }).unwrap();
        assert_eq!(m.image.get(16, 26), s.image.get(16, 26)); // r = 10
        assert_eq!(m.image.get(16, 25), 0.0);
        assert_eq!(m.image.get(16, 16), 0.0);
    }

    #[test]
    fn mask_is_idempotent() {
        let s = slice(Image2D::from_fn(20, 20, |r, c| (r + c) as f64));
        let mask = MaskSpec { inner_radius: 2.0, outer_radius: 8.0 };
        let once = apply_mask(&s, &mask).unwrap();
        assert_eq!(apply_mask(&once, &mask).unwrap(), once);
    }

    #[test]
    fn invalid_mask_rejected() {
        let s = slice(Image2D::zeros(10, 10));
        assert!(apply_mask(&s, &MaskSpec { inner_radius: 3.0, outer_radius: 2.0 }).is_err());
        assert!(apply_mask(&s, &MaskSpec { inner_radius: 0.0, outer_radius: 6.0 }).is_err());
    }
}
