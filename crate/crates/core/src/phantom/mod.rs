//! Synthetic rolled-scroll phantoms.
//!
//! A phantom is a thin sheet wound along an Archimedean spiral, identical in
//! every axial slice except for the ink it carries. Texture columns are laid
//! out along the spiral's arc length so glyphs keep their aspect ratio, and
//! the same mapping produces the flattened ground truth the unwrap stage is
//! scored against.

mod glyphs;
mod spiral;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use spiral::{Nearest, Spiral};

use crate::error::{Error, Result};
use crate::image::Image2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Width of the flattened sheet (texture columns).
    pub sheet_width_px: usize,
    /// Number of axial slices (texture rows).
    pub sheet_height_px: usize,
    pub inner_radius: f64,
    /// Radial distance between consecutive turns.
    pub layer_spacing: f64,
    pub num_turns: f64,
    pub sheet_thickness: f64,
    pub ink_attenuation: f64,
    pub substrate_attenuation: f64,
    /// Side of the square reconstruction grid.
    pub grid_size: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let mut spec = Self {
            sheet_width_px: 0,
            sheet_height_px: 64,
            inner_radius: 30.0,
            layer_spacing: 12.0,
            num_turns: 3.0,
            sheet_thickness: 2.0,
            ink_attenuation: 0.2,
            substrate_attenuation: 0.05,
            grid_size: 256,
        };
        spec.sheet_width_px = spec.spiral().total_arc_length().round() as usize;
        spec
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("inner_radius", self.inner_radius),
            ("layer_spacing", self.layer_spacing),
            ("num_turns", self.num_turns),
            ("sheet_thickness", self.sheet_thickness),
            ("ink_attenuation", self.ink_attenuation),
            ("substrate_attenuation", self.substrate_attenuation),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Spec(format!("{name} must be finite")));
        }
        if self.grid_size < 8 {
            return Err(Error::Spec("grid_size must be at least 8".into()));
        }
        if self.sheet_width_px == 0 || self.sheet_height_px == 0 {
            return Err(Error::Spec("sheet dimensions must be positive".into()));
        }
        if self.inner_radius < 0.0 {
            return Err(Error::Spec("inner_radius must be non-negative".into()));
        }
        if self.layer_spacing <= 0.0 || self.num_turns <= 0.0 || self.sheet_thickness <= 0.0 {
            return Err(Error::Spec(
                "layer_spacing, num_turns and sheet_thickness must be positive".into(),
            ));
        }
        let extent = self.inner_radius + self.num_turns * self.layer_spacing + self.sheet_thickness;
        if extent >= self.grid_size as f64 / 2.0 {
            return Err(Error::Spec(format!(
                "spiral extent {extent:.2} px does not fit in a {0}x{0} grid",
                self.grid_size
            )));
        }
        if self.layer_spacing <= 2.0 * self.sheet_thickness {
            return Err(Error::Spec(
                "layer_spacing must exceed twice the sheet thickness".into(),
            ));
        }
        if self.substrate_attenuation < 0.0 || self.ink_attenuation <= self.substrate_attenuation {
            return Err(Error::Spec(
                "need ink_attenuation > substrate_attenuation >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Sheet centre line, centred on the slice grid.
    pub fn spiral(&self) -> Spiral {
        let c = (self.grid_size as f64 - 1.0) / 2.0;
        Spiral {
            center: (c, c),
            inner_radius: self.inner_radius,
            layer_spacing: self.layer_spacing,
            num_turns: self.num_turns,
        }
    }

    /// Texture column printed at arc position `arc`.
    fn texture_column(&self, arc: f64, total: f64) -> usize {
        let w = self.sheet_width_px;
        if total <= 0.0 {
            return 0;
        }
        ((arc * w as f64 / total).floor().max(0.0) as usize).min(w - 1)
    }
}

/// Ink raster printed on the sheet; 1 = full ink, 0 = blank.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTexture {
    pub pixels: Image2D,
    pub origin_note: String,
}

impl TextTexture {
    pub fn new(pixels: Image2D, origin_note: impl Into<String>) -> Result<Self> {
        if pixels.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("texture values must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            origin_note: origin_note.into(),
        })
    }

    pub fn blank(rows: usize, cols: usize) -> Self {
        Self {
            pixels: Image2D::zeros(rows, cols),
            origin_note: "blank".into(),
        }
    }

    /// Renders upper-case text with the built-in 5x7 font.
    pub fn glyphs(text: &str, rows: usize, cols: usize, scale: usize) -> Self {
        let px = glyphs::render(text, rows, cols, scale);
        Self {
            pixels: Image2D::from_vec(rows, cols, px).expect("render returns rows*cols"),
            origin_note: format!("glyphs x{scale}: {text}"),
        }
    }

    /// Loads an 8-bit grayscale image; dark pixels are ink (`1 - L/255`).
    pub fn from_image_file(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        let values = img.pixels().map(|p| 1.0 - p.0[0] as f64 / 255.0).collect();
        Self::new(
            Image2D::from_vec(h as usize, w as usize, values)?,
            format!("file: {}", path.display()),
        )
    }

    fn check_against(&self, spec: &PhantomSpec) -> Result<()> {
        if self.pixels.dim() != (spec.sheet_height_px, spec.sheet_width_px) {
            return Err(Error::Shape(format!(
                "texture is {:?}, phantom sheet is {}x{}",
                self.pixels.dim(),
                spec.sheet_height_px,
                spec.sheet_width_px
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spiral: Spiral,
    /// Total arc length of the centre line, pixels.
    pub arc_length: f64,
    /// Texture resampled to one column per pixel of arc length.
    pub flattened_reference: Image2D,
}

/// One sheet pixel: flat index, anti-aliased coverage and texture column.
#[derive(Debug, Clone, Copy)]
struct Covered {
    index: usize,
    coverage: f64,
    column: usize,
}

/// z-independent rasterisation of the sheet, reusable across slices.
#[derive(Debug, Clone)]
pub struct SheetRaster {
    spec: PhantomSpec,
    pixels: Vec<Covered>,
}

impl SheetRaster {
    pub fn new(spec: &PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.grid_size;
        let spiral = spec.spiral();
        let total = spiral.total_arc_length();
        let half = spec.sheet_thickness / 2.0;
        let r_lo = spiral.inner_radius - half - 1.0;
        let r_hi = spiral.outer_radius() + half + 1.0;
        let mut pixels = Vec::new();
        for row in 0..n {
            for col in 0..n {
                let (x, y) = (col as f64, row as f64);
                let rho = (x - spiral.center.0).hypot(y - spiral.center.1);
                if rho > r_hi || rho < r_lo {
                    continue;
                }
                let near = spiral.nearest(x, y);
                // Linear ramp over one pixel centred on the sheet boundary.
                let coverage = (half + 0.5 - near.distance).clamp(0.0, 1.0);
                if coverage > 0.0 {
                    pixels.push(Covered {
                        index: row * n + col,
                        coverage,
                        column: spec.texture_column(spiral.arc_length_to(near.phi), total),
                    });
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            pixels,
        })
    }

    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    /// Attenuation map of slice `z`.
    pub fn slice(&self, texture: &TextTexture, z: usize) -> Result<Image2D> {
        texture.check_against(&self.spec)?;
        if z >= self.spec.sheet_height_px {
            return Err(Error::Range {
                what: "slice",
                index: z,
                len: self.spec.sheet_height_px,
            });
        }
        let n = self.spec.grid_size;
        let sub = self.spec.substrate_attenuation;
        let contrast = self.spec.ink_attenuation - sub;
        let mut img = Image2D::zeros(n, n);
        let data = img.as_slice_mut();
        for p in &self.pixels {
            let ink = texture.pixels.get(z, p.column);
            data[p.index] = p.coverage * (sub + contrast * ink);
        }
        Ok(img)
    }
}

/// Attenuation map `f(x, y)` of axial slice `z`.
pub fn rasterize_slice(spec: &PhantomSpec, texture: &TextTexture, z: usize) -> Result<Image2D> {
    SheetRaster::new(spec)?.slice(texture, z)
}

/// The image a perfect unwrap would produce: texture rows against arc
/// length, one column per pixel of arc.
pub fn flattened_reference(spec: &PhantomSpec, texture: &TextTexture) -> Result<GroundTruth> {
    spec.validate()?;
    texture.check_against(spec)?;
    let spiral = spec.spiral();
    let total = spiral.total_arc_length();
    let width = (total.round() as usize).max(1);
    let reference = Image2D::from_fn(spec.sheet_height_px, width, |r, j| {
        let arc = (j as f64 + 0.5) * total / width as f64;
        texture.pixels.get(r, spec.texture_column(arc, total))
    });
    Ok(GroundTruth {
        spiral,
        arc_length: total,
        flattened_reference: reference,
    })
}
