//! Scoring an unwrapped sheet against the phantom's flattened reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::phantom::Spiral;
use crate::unwrap::UnwrappedSheet;

const TWO_MEANS_ITERATIONS: usize = 100;

/// Pearson correlation of two equally sized images; 0 when either is flat.
pub fn ncc(a: &Image2D, b: &Image2D) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("ncc of {:?} and {:?}", a.dim(), b.dim())));
    }
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Two-class split of `values`: iterates the threshold to the midpoint of
/// the two class means. Returns `(threshold, low mean, high mean)`.
pub fn two_means_threshold(values: &[f64]) -> (f64, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut t = (lo + hi) / 2.0;
    let (mut m_lo, mut m_hi) = (lo, hi);
    for _ in 0..TWO_MEANS_ITERATIONS {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if v > t {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            break;
        }
        m_lo = s0 / n0 as f64;
        m_hi = s1 / n1 as f64;
        let next = (m_lo + m_hi) / 2.0;
        if next == t {
            break;
        }
        t = next;
    }
    (t, m_lo, m_hi)
}

/// Linear resampling of the columns of `image`, where column `k` sits at
/// position `k * spacing`, onto `width` columns centred at
/// `(j + 0.5) * length / width`.
pub fn resample_columns(image: &Image2D, spacing: f64, length: f64, width: usize) -> Image2D {
    let cols = image.cols();
    Image2D::from_fn(image.rows(), width, |r, j| {
        let pos = ((j as f64 + 0.5) * length / width as f64 / spacing).clamp(0.0, (cols - 1) as f64);
        let c0 = (pos.floor() as usize).min(cols.saturating_sub(2));
        let c1 = (c0 + 1).min(cols - 1);
        let w = pos - c0 as f64;
        image.get(r, c0) * (1.0 - w) + image.get(r, c1) * w
    })
}

/// Arc position of each path sample on `spiral`, taken from its closest
/// point and forced non-decreasing.
pub fn spiral_arc_positions(samples: &[(f64, f64)], spiral: &Spiral) -> Vec<f64> {
    let mut last = f64::NEG_INFINITY;
    samples
        .iter()
        .map(|&(x, y)| {
            last = last.max(spiral.arc_length_to(spiral.nearest(x, y).phi));
            last
        })
        .collect()
}

/// Resamples `image` onto `width` columns centred at
/// `(j + 0.5) * length / width`, given the arc position of every image
/// column. Targets outside the covered range get `fill`.
pub fn resample_at_arcs(image: &Image2D, column_arcs: &[f64], length: f64, width: usize, fill: f64) -> Result<Image2D> {
    if column_arcs.len() != image.cols() || column_arcs.is_empty() {
        return Err(Error::Shape(format!(
            "{} column positions for an image with {} columns",
            column_arcs.len(),
            image.cols()
        )));
    }
    let (first, last) = (column_arcs[0], column_arcs[column_arcs.len() - 1]);
    let mut out = Image2D::zeros(image.rows(), width);
    for j in 0..width {
        let a = (j as f64 + 0.5) * length / width as f64;
        if a < first || a > last {
            for r in 0..image.rows() {
                out.set(r, j, fill);
            }
            continue;
        }
        let k = column_arcs.partition_point(|&c| c <= a).clamp(1, column_arcs.len() - 1);
        let (c0, c1) = (column_arcs[k - 1], column_arcs[k]);
        let w = if c1 > c0 { ((a - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        for r in 0..image.rows() {
            out.set(r, j, image.get(r, k - 1) * (1.0 - w) + image.get(r, k) * w);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SheetScore {
    pub ncc: f64,
    pub threshold: f64,
    pub substrate_level: f64,
    pub ink_level: f64,
}

/// Thresholds the sheet at the midpoint between its two intensity classes
/// and correlates the resulting ink mask with `reference`.
///
/// `column_arcs` gives the reference arc position of every sheet column
/// and `length` the arc length the reference spans. Reference columns the
/// sheet does not cover count as blank.
pub fn score_sheet(sheet: &UnwrappedSheet, column_arcs: &[f64], length: f64, reference: &Image2D) -> Result<SheetScore> {
    if sheet.image.rows() != reference.rows() {
        return Err(Error::Shape(format!(
            "sheet has {} rows, reference {}",
            sheet.image.rows(),
            reference.rows()
        )));
    }
    let (threshold, substrate_level, ink_level) = two_means_threshold(sheet.image.as_slice());
    let aligned = resample_at_arcs(&sheet.image, column_arcs, length, reference.cols(), f64::NEG_INFINITY)?;
    let mask = aligned.map(|v| if v > threshold { 1.0 } else { 0.0 });
    Ok(SheetScore {
        ncc: ncc(&mask, reference)?,
        threshold,
        substrate_level,
        ink_level,
    })
}

/// [`score_sheet`] with columns registered by projecting the path samples
/// onto the true centre line.
pub fn score_against_spiral(
    sheet: &UnwrappedSheet,
    samples: &[(f64, f64)],
    spiral: &Spiral,
    reference: &Image2D,
) -> Result<SheetScore> {
    score_sheet(sheet, &spiral_arc_positions(samples, spiral), spiral.total_arc_length(), reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ncc_of_affine_copy_is_one() {
        let a = Image2D::from_fn(5, 7, |r, c| ((r * 7 + c) as f64).sin());
        assert!((ncc(&a, &a.map(|v| 3.0 * v - 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((ncc(&a, &a.map(|v| -v)).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ncc(&a, &Image2D::zeros(5, 7)).unwrap(), 0.0);
    }

    #[test]
    fn two_means_splits_bimodal_data() {
        let v = [0.1, 0.12, 0.08, 0.9, 1.1, 1.0];
        let (t, lo, hi) = two_means_threshold(&v);
        assert!((lo - 0.1).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        assert!((t - 0.55).abs() < 1e-12);
    }

    #[test]
    fn resampling_identity_when_grids_agree() {
        // Columns at 0.5, 1.5, ... with spacing 1 and an offset of half a pixel.
        let img = Image2D::from_fn(2, 6, |r, c| (r + 2 * c) as f64);
        let out = resample_columns(&img, 0.5, 3.0, 3);
        for r in 0..2 {
            for j in 0..3 {
                assert!((out.get(r, j) - img.get(r, 2 * j + 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arc_resampling_matches_uniform_resampling() {
        let img = Image2D::from_fn(3, 40, |r, c| (r as f64) + (c as f64 * 0.3).sin());
        let arcs: Vec<f64> = (0..40).map(|k| k as f64 * 0.5).collect();
        let a = resample_columns(&img, 0.5, 19.5, 13);
        let b = resample_at_arcs(&img, &arcs, 19.5, 13, -1.0).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let shifted: Vec<f64> = arcs.iter().map(|a| a + 5.0).collect();
        let c = resample_at_arcs(&img, &shifted, 19.5, 13, -1.0).unwrap();
        assert_eq!(c.get(0, 0), -1.0);
    }

    #[test]
    fn spiral_positions_recover_arc_length() {
        let spiral = Spiral {
            center: (50.0, 50.0),
            inner_radius: 10.0,
            layer_spacing: 8.0,
            num_turns: 2.0,
        };
        let total = spiral.total_arc_length();
        let samples: Vec<(f64, f64)> = (0..=50).map(|k| spiral.point(spiral.phi_at_arc(total * k as f64 / 50.0))).collect();
        for (k, a) in spiral_arc_positions(&samples, &spiral).into_iter().enumerate() {
            assert!((a - total * k as f64 / 50.0).abs() < 1e-6);
        }
    }
}
