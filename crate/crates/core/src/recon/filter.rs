use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::Sinogram;

/// Highest representable frequency, cycles per detector bin.
pub const NYQUIST: f64 = 0.5;

/// Imaginary residue tolerated after the inverse transform, relative to the
/// row's L2 norm.
const IMAG_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// `|sigma|` over the whole band.
    Ramp,
    /// `|sigma|` up to `cutoff * Nyquist`, zero above.
    RamLak,
    /// Identity; filtering is skipped in spirit but still round-trips the FFT.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Fraction of Nyquist, in `(0, 1]`.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
}

fn default_cutoff() -> f64 {
    1.0
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            kind: FilterKind::RamLak,
            cutoff: 1.0,
        }
    }
}

impl FilterSpec {
    pub fn ram_lak(cutoff: f64) -> Self {
        Self {
            kind: FilterKind::RamLak,
            cutoff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(Error::Parameter(format!(
                "filter cutoff {} outside (0, 1]",
                self.cutoff
            )));
        }
        Ok(())
    }

    /// Frequency response at `sigma` cycles per detector bin.
    pub fn response(&self, sigma: f64) -> f64 {
        let a = sigma.abs();
        match self.kind {
            FilterKind::None => 1.0,
            FilterKind::Ramp => a,
            FilterKind::RamLak => {
                if a <= self.cutoff * NYQUIST {
                    a
                } else {
                    0.0
                }
            }
        }
    }

    /// Response on the DFT grid of length `len`: bin `k` is at
    /// `k / len` for `k <= len / 2`, `(k - len) / len` above.
    pub fn sampled_response(&self, len: usize) -> Vec<f64> {
        (0..len)
            .map(|k| self.response(dft_frequency(k, len)))
            .collect()
    }
}

/// Signed frequency of DFT bin `k`, cycles per sample.
pub fn dft_frequency(k: usize, len: usize) -> f64 {
    if k <= len / 2 {
        k as f64 / len as f64
    } else {
        (k as f64 - len as f64) / len as f64
    }
}

/// Zero-padded transform length used for a row of `n` detectors.
pub fn padded_len(n: usize) -> usize {
    2 * n.next_power_of_two()
}

/// Filters every angle row independently in the Fourier domain.
///
/// Output is in the same units as the input; the `1 / detector_spacing`
/// factor of the continuous ramp is applied by [`fbp`](super::fbp).
pub fn apply_filter(sino: &Sinogram, filter: &FilterSpec) -> Result<Sinogram> {
    filter.validate()?;
    if sino.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("sinogram contains non-finite values".into()));
    }
    let (na, nd) = sino.data.dim();
    let len = padded_len(nd);
    let response = filter.sampled_response(len);
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);

    let rows: Vec<Result<Vec<f64>>> = (0..na)
        .into_par_iter()
        .map(|i| {
            let row = sino.data.row(i);
            let mut buf: Vec<Complex64> = row
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
                .take(len)
                .collect();
            forward.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(&response) {
                *b *= h;
            }
            inverse.process(&mut buf);
            let scale = 1.0 / len as f64;
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let residue = buf[..nd]
                .iter()
                .fold(0.0f64, |m, c| m.max((c.im * scale).abs()));
            if residue > IMAG_TOLERANCE * norm.max(f64::MIN_POSITIVE) {
                return Err(Error::Internal(format!(
                    "filtered row {i} has imaginary residue {residue:e}"
                )));
            }
            Ok(buf[..nd].iter().map(|c| c.re * scale).collect())
        })
        .collect();

    let mut out = sino.clone();
    for (i, row) in rows.into_iter().enumerate() {
        for (dst, v) in out.data.row_mut(i).iter_mut().zip(row?) {
            *dst = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Geometry;
    use ndarray::Array2;

    fn sino(data: Array2<f64>) -> Sinogram {
        let (na, nd) = data.dim();
        Sinogram::new(
            data,
            Geometry {
                num_angles: na,
                num_detectors: nd,
                ..Geometry::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn padding_is_twice_next_power_of_two() {
        assert_eq!(padded_len(288), 1024);
        assert_eq!(padded_len(256), 512);
        assert_eq!(padded_len(1), 2);
    }

    #[test]
    fn identity_filter_round_trips() {
        let s = sino(Array2::from_shape_fn((3, 37), |(i, j)| ((i * 37 + j) as f64).sin()));
        let out = apply_filter(&s, &FilterSpec { kind: FilterKind::None, cutoff: 1.0 }).unwrap();
        for (a, b) in out.data.iter().zip(s.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_kills_dc_on_the_padded_grid() {
        // H(0) = 0: a constant row's filtered output integrates to zero over
        // the padded period.
        let spec = FilterSpec { kind: FilterKind::Ramp, cutoff: 1.0 };
        let h = spec.sampled_response(64);
        assert_eq!(h[0], 0.0);
        let s = sino(Array2::from_elem((1, 32), 1.0));
        let out = apply_filter(&s, &spec).unwrap();
        // Only the kernel tails reach the middle of the support: small
        // compared with the unit input, but not zero (the support is finite).
        let mid = out.data[[0, 16]];
        assert!(mid.abs() < 1e-2, "{mid}");
    }

    #[test]
    fn ram_lak_examples() {
        let f = FilterSpec::ram_lak(0.5);
        assert_eq!(f.response(0.0), 0.0);
        assert_eq!(f.response(0.1), 0.1);
        assert_eq!(f.response(-0.25), 0.25);
        assert_eq!(f.response(0.26), 0.0);
        assert!(FilterSpec::ram_lak(0.0).validate().is_err());
        assert!(FilterSpec::ram_lak(1.5).validate().is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut s = sino(Array2::zeros((1, 4)));
        s.data[[0, 1]] = f64::NAN;
        assert!(matches!(apply_filter(&s, &FilterSpec::default()), Err(Error::Data(_))));
    }
}
