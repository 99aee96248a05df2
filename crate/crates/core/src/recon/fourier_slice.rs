//! Numerical check that each projection's 1-D spectrum is a radial line of
//! the slice's 2-D spectrum.
//!
//! The projection side goes through the ray-marching forward projector and
//! a 1-D FFT; the slice side takes a zero-padded 2-D FFT of the raw pixels
//! and interpolates it on the radial line. The two share no code beyond the
//! FFT library.

use std::f64::consts::TAU;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::projection::{radon, Geometry};

/// Compared band, as a fraction of the Nyquist frequency.
const BAND: f64 = 0.25;
/// 2-D spectrum oversampling factor.
const OVERSAMPLE: usize = 4;
/// Border fraction that must be empty.
const MARGIN: f64 = 0.10;

/// Maximum deviation between the two spectra over `|sigma| <= Nyquist / 4`,
/// relative to the largest 2-D spectrum magnitude on the compared lines.
pub fn fourier_slice_check(slice: &Image2D, geometry: &Geometry) -> Result<f64> {
    if !slice.is_square() {
        return Err(Error::Shape("fourier_slice_check needs a square slice".into()));
    }
    let peak = slice.max_abs();
    if peak == 0.0 {
        return Ok(0.0);
    }
    let n = slice.rows();
    let border = (MARGIN * n as f64).ceil() as usize;
    for ((r, c), &v) in slice.array().indexed_iter() {
        let inside = r >= border && c >= border && r < n - border && c < n - border;
        if !inside && v.abs() > 1e-9 * peak {
            return Err(Error::Parameter(format!(
                "slice support reaches pixel ({r}, {c}) inside the {border}-pixel border"
            )));
        }
    }

    let spectrum = Spectrum2D::new(slice);
    let sino = radon(slice, geometry)?;
    let nd = geometry.num_detectors;
    let len = 2 * nd.next_power_of_two();
    let ds = geometry.detector_spacing;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    // Ray offset of detector 0 relative to the rotation centre.
    let s0 = geometry.detector_position(0) - geometry.center_offset;
    let band = BAND * 0.5;

    let mut max_diff: f64 = 0.0;
    let mut max_ref: f64 = 0.0;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for i in 0..geometry.num_angles {
        let (sin, cos) = geometry.angle(i).sin_cos();
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for (b, &p) in buf.iter_mut().zip(sino.data.row(i)) {
            b.re = p;
        }
        fft.process(&mut buf);
        for (k, &b) in buf.iter().enumerate() {
            let nu = super::dft_frequency(k, len) / ds; // cycles per pixel
            if nu.abs() > band {
                continue;
            }
            let proj = b * ds * Complex64::from_polar(1.0, -TAU * nu * s0);
            let reference = spectrum.at(nu * cos, nu * sin);
            max_diff = max_diff.max((proj - reference).norm());
            max_ref = max_ref.max(reference.norm());
        }
    }
    if max_ref == 0.0 {
        return Ok(0.0);
    }
    Ok(max_diff / max_ref)
}

/// Zero-padded 2-D DFT with its phase origin at the slice centre.
struct Spectrum2D {
    size: usize,
    data: Vec<Complex64>,
    center: (f64, f64),
}

impl Spectrum2D {
    fn new(slice: &Image2D) -> Self {
        let n = slice.rows();
        let m = OVERSAMPLE * n.next_power_of_two();
        let mut data = vec![Complex64::new(0.0, 0.0); m * m];
        for r in 0..n {
            for c in 0..n {
                data[r * m + c].re = slice.get(r, c);
            }
        }
        let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
        for row in data.chunks_mut(m) {
            fft.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for c in 0..m {
            for r in 0..m {
                col[r] = data[r * m + c];
            }
            fft.process(&mut col);
            for r in 0..m {
                data[r * m + c] = col[r];
            }
        }
        let (cy, cx) = slice.center();
        Self {
            size: m,
            data,
            center: (cx, cy),
        }
    }

    /// Centred spectrum at grid bin `(ix, iy)` (wrapped).
    fn bin(&self, ix: i64, iy: i64) -> Complex64 {
        let m = self.size as i64;
        let (ux, uy) = (ix.rem_euclid(m) as usize, iy.rem_euclid(m) as usize);
        let kx = ix as f64 / m as f64;
        let ky = iy as f64 / m as f64;
        self.data[uy * self.size + ux]
            * Complex64::from_polar(1.0, TAU * (kx * self.center.0 + ky * self.center.1))
    }

    /// Bilinear interpolation at `(kx, ky)` cycles per pixel.
    fn at(&self, kx: f64, ky: f64) -> Complex64 {
        let m = self.size as f64;
        let (fx, fy) = (kx * m, ky * m);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        self.bin(x0, y0) * ((1.0 - tx) * (1.0 - ty))
            + self.bin(x0 + 1, y0) * (tx * (1.0 - ty))
            + self.bin(x0, y0 + 1) * ((1.0 - tx) * ty)
            + self.bin(x0 + 1, y0 + 1) * (tx * ty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_image_has_zero_error() {
        let g = Geometry {
            num_angles: 8,
            num_detectors: 40,
            ..Geometry::default()
        };
        assert_eq!(fourier_slice_check(&Image2D::zeros(32, 32), &g).unwrap(), 0.0);
    }

    #[test]
    fn support_touching_border_rejected() {
        let mut img = Image2D::zeros(32, 32);
        img.set(1, 16, 1.0);
        let g = Geometry {
            num_angles: 8,
            num_detectors: 40,
            ..Geometry::default()
        };
        assert!(matches!(fourier_slice_check(&img, &g), Err(Error::Parameter(_))));
    }
}
