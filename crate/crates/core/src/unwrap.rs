//! Texturing, flattening, merging and maximum intensity projection.
//!
//! The segmented curve is swept through the slice stack; at every slice and
//! path sample a short line of voxels is read along the curve normal
//! (texturing), and the maximum across that line becomes one pixel of the
//! flat sheet (MIP across the sheet thickness). Rows of the sheet are
//! slices, columns are arc-length positions along the curve.

use ndarray::{Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::segmentation::SpiralPath;

/// Step between normal offsets, pixels.
pub const NORMAL_STEP: f64 = 0.5;

/// Default half-width of the band read across the sheet, pixels.
pub const DEFAULT_BAND_HALFWIDTH: f64 = 2.0;

/// Preview view angles, radians.
const PREVIEW_AZIMUTH: f64 = 0.5;
const PREVIEW_ELEVATION: f64 = 0.35;

/// Stack of reconstructed slices indexed by z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    slices: Vec<Image2D>,
}

impl Volume {
    pub fn new(slices: Vec<Image2D>) -> Result<Self> {
        let first = slices.first().ok_or_else(|| Error::Shape("volume needs at least one slice".into()))?;
        let dim = first.dim();
        for (z, s) in slices.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::Shape(format!("slice {z} is {:?}, slice 0 is {dim:?}", s.dim())));
            }
            if !s.is_finite() {
                return Err(Error::Data(format!("slice {z} has non-finite values")));
            }
        }
        Ok(Self { slices })
    }

    pub fn slices(&self) -> &[Image2D] {
        &self.slices
    }

    pub fn slice(&self, z: usize) -> Result<&Image2D> {
        self.slices.get(z).ok_or(Error::Range {
            what: "slice",
            index: z,
            len: self.slices.len(),
        })
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    /// `(rows, cols)` of every slice.
    pub fn slice_dim(&self) -> (usize, usize) {
        self.slices[0].dim()
    }

    pub fn grid_size(&self) -> usize {
        self.slices[0].rows()
    }

    /// Short content hash, used as an identifier in provenance records.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.slices {
            for v in s.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        short_hex(&h.finalize())
    }
}

/// Short content hash of a path's samples.
pub fn path_id(path: &SpiralPath) -> String {
    let mut h = Sha256::new();
    for (x, y) in &path.samples {
        h.update(x.to_le_bytes());
        h.update(y.to_le_bytes());
    }
    short_hex(&h.finalize())
}

fn short_hex(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path_id: String,
    pub volume_id: String,
    /// Band samples that fell outside their slice and read the slice minimum.
    pub out_of_bounds_samples: usize,
}

/// Intensities indexed `(z, arc position, normal offset)`; the last axis
/// holds offsets `-K..=K` times `normal_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedBand {
    pub values: Array3<f64>,
    pub band_halfwidth: f64,
    pub normal_step: f64,
    pub provenance: Provenance,
}

impl TexturedBand {
    /// Wraps raw values; the offset axis must have odd length `2K + 1`.
    pub fn from_values(values: Array3<f64>, normal_step: f64) -> Result<Self> {
        let k_len = values.len_of(Axis(2));
        if k_len % 2 == 0 {
            return Err(Error::Shape(format!("offset axis must have odd length, got {k_len}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("band has non-finite values".into()));
        }
        Ok(Self {
            band_halfwidth: (k_len / 2) as f64 * normal_step,
            values,
            normal_step,
            provenance: Provenance {
                path_id: String::new(),
                volume_id: String::new(),
                out_of_bounds_samples: 0,
            },
        })
    }

    /// `K`, the number of offsets on each side of the curve.
    pub fn half_count(&self) -> usize {
        self.values.len_of(Axis(2)) / 2
    }
}

/// Reads every slice along `path`, `band_halfwidth` pixels to each side of
/// the curve at [`NORMAL_STEP`] spacing, with bilinear interpolation.
pub fn texture(volume: &Volume, path: &SpiralPath, band_halfwidth: f64) -> Result<TexturedBand> {
    if !(band_halfwidth > 0.0 && band_halfwidth.is_finite()) {
        return Err(Error::Parameter(format!("band_halfwidth must be positive, got {band_halfwidth}")));
    }
    if path.samples.is_empty() {
        return Err(Error::Shape("path has no samples".into()));
    }
    let k_half = (band_halfwidth / NORMAL_STEP).round() as usize;
    let offsets: Vec<f64> = (0..=2 * k_half).map(|k| (k as f64 - k_half as f64) * NORMAL_STEP).collect();
    let normals = path.normals();
    let mut values = Array3::<f64>::zeros((volume.num_slices(), path.samples.len(), offsets.len()));
    let outside: usize = values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(volume.slices.par_iter())
        .map(|(mut plane, slice)| {
            let fill = slice.min();
            let mut missed = 0;
            for (i, (&(x, y), &(nx, ny))) in path.samples.iter().zip(&normals).enumerate() {
                for (k, &d) in offsets.iter().enumerate() {
                    plane[[i, k]] = slice.sample(y + d * ny, x + d * nx).unwrap_or_else(|| {
                        missed += 1;
                        fill
                    });
                }
            }
            missed
        })
        .sum();
    Ok(TexturedBand {
        values,
        band_halfwidth,
        normal_step: NORMAL_STEP,
        provenance: Provenance {
            path_id: path_id(path),
            volume_id: volume.id(),
            out_of_bounds_samples: outside,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnwrappedSheet {
    /// Rows are slices, columns are path samples.
    pub image: Image2D,
    pub band_halfwidth: f64,
    pub provenance: Provenance,
    /// Slice index of the first row.
    pub z_offset: usize,
}

impl UnwrappedSheet {
    pub fn z_range(&self) -> std::ops::Range<usize> {
        self.z_offset..self.z_offset + self.image.rows()
    }
}

/// Maximum over the normal offsets of every `(z, arc)` position.
pub fn mip_flatten(band: &TexturedBand) -> UnwrappedSheet {
    let image = band.values.map_axis(Axis(2), |line| line.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    UnwrappedSheet {
        image: Image2D::from_array(image),
        band_halfwidth: band.band_halfwidth,
        provenance: band.provenance.clone(),
        z_offset: 0,
    }
}

/// Stacks sheets in z order; rows covered by more than one sheet take the
/// per-pixel maximum.
pub fn merge(sheets: &[UnwrappedSheet]) -> Result<UnwrappedSheet> {
    let first = sheets.first().ok_or_else(|| Error::Merge("no sheets given".into()))?;
    let width = first.image.cols();
    if let Some(bad) = sheets.iter().find(|s| s.image.cols() != width) {
        return Err(Error::Merge(format!(
            "sheet widths differ ({} vs {width} columns); sheets must share one path",
            bad.image.cols()
        )));
    }
    if let Some(bad) = sheets.iter().find(|s| s.band_halfwidth != first.band_halfwidth) {
        return Err(Error::Merge(format!(
            "band half-widths differ ({} vs {})",
            bad.band_halfwidth, first.band_halfwidth
        )));
    }
    let z0 = sheets.iter().map(|s| s.z_offset).min().expect("non-empty");
    let z1 = sheets.iter().map(|s| s.z_range().end).max().expect("non-empty");
    let mut image = Image2D::filled(z1 - z0, width, f64::NEG_INFINITY);
    let mut covered = vec![false; z1 - z0];
    for s in sheets {
        for r in 0..s.image.rows() {
            let out_r = s.z_offset + r - z0;
            covered[out_r] = true;
            for c in 0..width {
                let v = image.get(out_r, c).max(s.image.get(r, c));
                image.set(out_r, c, v);
            }
        }
    }
    if let Some(gap) = covered.iter().position(|&c| !c) {
        return Err(Error::Merge(format!("no sheet covers slice {}", z0 + gap)));
    }
    let mut out_of_bounds = 0;
    for s in sheets {
        out_of_bounds += s.provenance.out_of_bounds_samples;
    }
    Ok(UnwrappedSheet {
        image,
        band_halfwidth: first.band_halfwidth,
        provenance: Provenance {
            out_of_bounds_samples: out_of_bounds,
            ..first.provenance.clone()
        },
        z_offset: z0,
    })
}

/// Literal per-pixel maximum over z of the volume; a debug view of the
/// un-segmented stack.
pub fn mip_z(volume: &Volume) -> Image2D {
    let (rows, cols) = volume.slice_dim();
    let mut out = Image2D::filled(rows, cols, f64::NEG_INFINITY);
    for s in volume.slices() {
        for (o, &v) in out.as_slice_mut().iter_mut().zip(s.as_slice()) {
            *o = o.max(v);
        }
    }
    out
}

/// Orthographic view of the textured shell from slightly above, nearer
/// surface points drawn brighter. Background is zero.
pub fn render_preview(volume: &Volume, path: &SpiralPath) -> Image2D {
    let (rows, cols) = volume.slice_dim();
    let (ca, sa) = (PREVIEW_AZIMUTH.cos(), PREVIEW_AZIMUTH.sin());
    let (ce, se) = (PREVIEW_ELEVATION.cos(), PREVIEW_ELEVATION.sin());
    let (cy, cx) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let radius = cx.hypot(cy);
    let nz = volume.num_slices();
    let top = radius * se;
    let out_rows = (nz as f64 * ce + 2.0 * top).ceil() as usize + 1;
    let out_cols = (2.0 * radius).ceil() as usize + 1;

    let mut image = Image2D::zeros(out_rows, out_cols);
    let mut depth = vec![f64::INFINITY; out_rows * out_cols];
    for (z, slice) in volume.slices().iter().enumerate() {
        for &(x, y) in &path.samples {
            let (dx, dy) = (x - cx, y - cy);
            let u = dx * ca - dy * sa + radius;
            // Depth along the view direction; smaller is nearer.
            let d = dx * sa + dy * ca;
            let v = top + z as f64 * ce - d * se;
            let (r, c) = (v.round(), u.round());
            if r < 0.0 || c < 0.0 || r >= out_rows as f64 || c >= out_cols as f64 {
                continue;
            }
            let idx = r as usize * out_cols + c as usize;
            if d < depth[idx] {
                depth[idx] = d;
                let shade = 0.55 + 0.45 * (1.0 - (d + radius) / (2.0 * radius)).clamp(0.0, 1.0);
                image.as_slice_mut()[idx] = shade * slice.sample_or(y, x, 0.0);
            }
        }
    }
    image
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(values: Array3<f64>) -> TexturedBand {
        TexturedBand::from_values(values, NORMAL_STEP).unwrap()
    }

    #[test]
    fn single_offset_mip_is_identity() {
        let v = Array3::from_shape_fn((3, 4, 1), |(z, a, _)| (z * 10 + a) as f64);
        let sheet = mip_flatten(&band(v.clone()));
        for ((z, a, _), &x) in v.indexed_iter() {
            assert_eq!(sheet.image.get(z, a), x);
        }
    }

    #[test]
    fn monotone_band_takes_outermost_offset() {
        let v = Array3::from_shape_fn((2, 3, 5), |(_, _, k)| k as f64 - 2.0);
        let sheet = mip_flatten(&band(v));
        assert!(sheet.image.as_slice().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn even_offset_axis_is_rejected() {
        assert!(TexturedBand::from_values(Array3::zeros((1, 1, 2)), NORMAL_STEP).is_err());
    }

    #[test]
    fn volume_shape_checks() {
        assert!(Volume::new(vec![]).is_err());
        assert!(Volume::new(vec![Image2D::zeros(4, 4), Image2D::zeros(4, 5)]).is_err());
        assert!(Volume::new(vec![Image2D::filled(2, 2, f64::NAN)]).is_err());
    }
}
