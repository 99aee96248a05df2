use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::projection::Sinogram;

/// Smears each angle row back along its rays:
/// `out(x, y) = sum_i sino(i, x cos(theta_i) + y sin(theta_i)) * delta_theta`,
/// with linear interpolation between detector bins and zero beyond the
/// outermost bins.
pub fn back_project(sino: &Sinogram, grid_size: usize) -> Result<Image2D> {
    if grid_size < 2 {
        return Err(Error::Shape(format!("grid_size {grid_size} < 2")));
    }
    let g = &sino.geometry;
    let (na, nd) = sino.data.dim();
    if na != g.num_angles || nd != g.num_detectors {
        return Err(Error::Shape("sinogram data does not match its geometry".into()));
    }
    let c = (grid_size as f64 - 1.0) / 2.0;
    let inv_spacing = 1.0 / g.detector_spacing;
    let det_center = (nd as f64 - 1.0) / 2.0;
    let dtheta = g.angle_step();
    let last = (nd - 1) as f64;

    let mut out = Image2D::zeros(grid_size, grid_size);
    let acc = out.as_slice_mut();
    for i in 0..na {
        let row = sino.data.row(i);
        let row = row.as_slice().expect("sinogram rows are contiguous");
        let (sin, cos) = g.angle(i).sin_cos();
        // Fractional detector index as an affine function of (col, row).
        let step_x = cos * inv_spacing;
        for r in 0..grid_size {
            let y = r as f64 - c;
            let base = (-c * cos + y * sin + g.center_offset) * inv_spacing + det_center;
            let dst = &mut acc[r * grid_size..(r + 1) * grid_size];
            for (col, d) in dst.iter_mut().enumerate() {
                let j = base + col as f64 * step_x;
                if j < 0.0 || j > last {
                    continue;
                }
                let j0 = j.floor();
                let frac = j - j0;
                let j0 = j0 as usize;
                let v = if j0 + 1 < nd {
                    row[j0] * (1.0 - frac) + row[j0 + 1] * frac
                } else {
                    row[j0]
                };
                *d += v * dtheta;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Geometry;
    use ndarray::Array2;

    #[test]
    fn zero_in_zero_out() {
        let g = Geometry {
            num_angles: 8,
            num_detectors: 12,
            ..Geometry::default()
        };
        let img = back_project(&Sinogram::zeros(g), 10).unwrap();
        assert!(img.as_slice().iter().all(|&v| v == 0.0));
        assert!(back_project(&Sinogram::zeros(g), 1).is_err());
    }

    #[test]
    fn single_bin_smears_a_stripe() {
        // theta = 0: s = x, so detector j lights the column x = s_j.
        let g = Geometry {
            num_angles: 1,
            num_detectors: 21,
            angle_range: std::f64::consts::PI,
            ..Geometry::default()
        };
        let mut data = Array2::zeros((1, 21));
        data[[0, 13]] = 1.0; // s = +3
        let sino = Sinogram::new(data, g).unwrap();
        let img = back_project(&sino, 21).unwrap();
        for r in 0..21 {
            for c in 0..21 {
                let expect = if c == 13 { g.angle_step() } else { 0.0 };
                assert!((img.get(r, c) - expect).abs() < 1e-12, "({r},{c})");
            }
        }
    }
}
