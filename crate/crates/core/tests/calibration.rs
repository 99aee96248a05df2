use std::time::Instant;

use vunwrap_core::calibration::{difference_image, find_axis, AxisCalibration};
use vunwrap_core::phantom::{PhantomSpec, TextTexture};
use vunwrap_core::preprocess::{ProjectionStack, RectifyParams};
use vunwrap_core::projection::{acquire_volume, Acquisition, Geometry, NoiseModel};
use vunwrap_core::Error;

fn spec() -> PhantomSpec {
    let mut s = PhantomSpec {
        sheet_width_px: 0,
        sheet_height_px: 32,
        inner_radius: 8.0,
        layer_spacing: 6.0,
        num_turns: 2.0,
        sheet_thickness: 2.0,
        ink_attenuation: 0.4,
        substrate_attenuation: 0.1,
        grid_size: 64,
    };
    s.sheet_width_px = s.spiral().total_arc_length().round() as usize;
    s
}

fn stack(offset: f64, tilt_deg: f64, noise: f64) -> ProjectionStack {
    let s = spec();
    let tex = TextTexture::glyphs("AXIS", s.sheet_height_px, s.sheet_width_px, 1);
    let g = Geometry {
        num_angles: 800,
        num_detectors: 100,
        center_offset: offset,
        tilt: tilt_deg.to_radians(),
        ..Geometry::default()
    };
    let acq = Acquisition {
        noise: NoiseModel::new(noise, 42),
        row_margin: 6,
        ..Acquisition::default()
    };
    let frames = acquire_volume(&s, &tex, &g, &acq).unwrap();
    ProjectionStack::new(frames, g).unwrap()
}

fn params(st: &ProjectionStack, center: f64, tilt: f64) -> RectifyParams {
    let (rows, cols) = st.frame_dim();
    AxisCalibration { center_column: center, tilt, residual: 0.0, pair_index: 0 }.rectify_params(rows, cols)
}

#[test]
fn aligned_difference_vanishes() {
    let st = stack(5.0, 0.0, 0.0);
    let truth = st.geometry.axis_column();
    let aligned = difference_image(&st, 0, &params(&st, truth, 0.0)).unwrap();
    let wrong = difference_image(&st, 0, &params(&st, truth - 5.0, 0.0)).unwrap();
    let range = wrong.max - wrong.min;
    assert!(aligned.max.abs().max(aligned.min.abs()) <= 1e-3 * range, "{aligned:?}");
    assert!(wrong.mean_abs() > 10.0 * aligned.mean_abs());
}

#[test]
fn truth_beats_every_displaced_candidate() {
    let st = stack(-3.0, 0.0, 0.0);
    let truth = st.geometry.axis_column();
    let at_truth = difference_image(&st, 100, &params(&st, truth, 0.0)).unwrap().mean_abs();
    for dc in [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0] {
        let other = difference_image(&st, 100, &params(&st, truth + dc, 0.0)).unwrap().mean_abs();
        assert!(at_truth < other, "shift {dc}");
    }
}

#[test]
fn recovers_injected_offset_and_tilt() {
    for (offset, tilt) in [(5.0, 0.0), (-7.0, 1.0), (0.0, 0.0)] {
        let st = stack(offset, tilt, 0.0);
        let t = Instant::now();
        let cal = find_axis(&st, 4).unwrap();
        let dc = cal.center_column - st.geometry.axis_column();
        let dt = cal.tilt.to_degrees() - tilt;
        eprintln!("offset {offset} tilt {tilt}: dc {dc:.3} dt {dt:.3} in {:?}", t.elapsed());
        assert!(dc.abs() <= 0.5 && dt.abs() <= 0.1, "offset {offset} tilt {tilt}: {cal:?}");
        assert!(cal.residual >= 0.0);
        assert_eq!(find_axis(&st, 4).unwrap(), cal);
    }
}

#[test]
fn noisy_recovery() {
    let st = stack(3.0, -1.0, 0.01);
    let cal = find_axis(&st, 4).unwrap();
    let dc = cal.center_column - st.geometry.axis_column();
    let dt = cal.tilt.to_degrees() + 1.0;
    eprintln!("noisy: dc {dc:.3} dt {dt:.3}");
    assert!(dc.abs() <= 0.5 && dt.abs() <= 0.1, "{cal:?}");
}

#[test]
fn offset_outside_box_fails() {
    let st = stack(20.0, 0.0, 0.0);
    assert!(matches!(find_axis(&st, 2), Err(Error::CalibrationFailed(_))));
}

