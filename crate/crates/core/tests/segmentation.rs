use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vunwrap_core::phantom::{PhantomSpec, Spiral, TextTexture};
use vunwrap_core::projection::{radon, Geometry};
use vunwrap_core::recon::{fbp, FilterSpec, ReconSlice};
use vunwrap_core::segmentation::{
    fit_spline, fitness, optimize_with, ControlPoints, GAConfig, SmoothingSpline, SpiralPath, SAMPLE_SPACING,
};
use vunwrap_core::{Error, Image2D};

fn spiral_points(spiral: &Spiral) -> ControlPoints {
    ControlPoints::new(spiral.decimated(8)).unwrap()
}

fn max_deviation(path: &SpiralPath, spiral: &Spiral) -> f64 {
    path.samples.iter().map(|&(x, y)| spiral.nearest(x, y).distance).fold(0.0, f64::max)
}

fn mean_deviation(path: &SpiralPath, spiral: &Spiral) -> f64 {
    path.samples.iter().map(|&(x, y)| spiral.nearest(x, y).distance).sum::<f64>() / path.samples.len() as f64
}

fn phantom_slice() -> (ReconSlice, Spiral) {
    let spec = PhantomSpec::default();
    let tex = TextTexture::blank(spec.sheet_height_px, spec.sheet_width_px);
    let f = vunwrap_core::phantom::rasterize_slice(&spec, &tex, 0).unwrap();
    let g = Geometry {
        num_angles: 400,
        ..Geometry::default()
    };
    let rec = fbp(&radon(&f, &g).unwrap(), spec.grid_size, &FilterSpec::default()).unwrap();
    (rec, spec.spiral())
}

#[test]
fn collinear_points_give_a_straight_path() {
    let cp = ControlPoints::new(vec![(1.0, 2.0), (4.0, 6.0), (5.5, 8.0), (10.0, 14.0), (13.0, 18.0)]).unwrap();
    for p in [0.0, 0.5, 1.0] {
        let path = fit_spline(&cp, p).unwrap();
        for &(x, y) in &path.samples {
            // Line 4x - 3y + 2 = 0.
            assert!(((4.0 * x - 3.0 * y + 2.0) / 5.0).abs() < 1e-6);
        }
        assert!((path.arc_length - 20.0).abs() < 1e-3, "{}", path.arc_length);
    }
}

#[test]
fn interpolating_spline_hits_every_control_point() {
    let spiral = PhantomSpec::default().spiral();
    let cp = spiral_points(&spiral);
    let path = fit_spline(&cp, 1.0).unwrap();
    for &(px, py) in &cp.points {
        let d = path.samples.iter().map(|&(x, y)| (x - px).hypot(y - py)).fold(f64::INFINITY, f64::min);
        // Samples are 0.5 px apart; the curve itself passes through the point.
        assert!(d <= SAMPLE_SPACING / 2.0 + 1e-6);
    }
    assert_eq!(path.samples[0], cp.points[0]);
}

#[test]
fn spline_through_decimated_spiral_tracks_it() {
    let spiral = PhantomSpec::default().spiral();
    let path = fit_spline(&spiral_points(&spiral), 1.0).unwrap();
    let dev = max_deviation(&path, &spiral);
    assert!(dev <= 0.5, "max deviation {dev}");
    let rel = (path.arc_length - spiral.total_arc_length()).abs() / spiral.total_arc_length();
    assert!(rel < 0.01);
}

#[test]
fn control_residual_shrinks_as_smoothing_rises() {
    let spiral = PhantomSpec::default().spiral();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cp = ControlPoints::new(
        spiral
            .decimated(8)
            .into_iter()
            .map(|(x, y)| (x + rng.random_range(-1.0..1.0), y + rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap();
    let residual = |p: f64| {
        let path = fit_spline(&cp, p).unwrap();
        cp.points
            .iter()
            .map(|&(px, py)| {
                path.samples.iter().map(|&(x, y)| (x - px).powi(2) + (y - py).powi(2)).fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
    };
    let r: Vec<f64> = [1e-7, 1e-5, 1e-3, 1.0].iter().map(|&p| residual(p)).collect();
    assert!(r.windows(2).all(|w| w[1] <= w[0] + 1e-6), "{r:?}");
    assert!(r[0] > 10.0 * r[3], "{r:?}");
}

#[test]
fn spline_residual_is_monotone_in_smoothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t: Vec<f64> = (0..30).map(|i| i as f64 * 2.0).collect();
    let y: Vec<f64> = t.iter().map(|v| (v / 9.0).sin() * 5.0 + rng.random_range(-1.0..1.0)).collect();
    let sse = |p: f64| {
        let s = SmoothingSpline::fit(&t, &y, p).unwrap();
        s.knot_values().iter().zip(&y).map(|(f, v)| (f - v).powi(2)).sum::<f64>()
    };
    let ps = [0.0, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 0.9, 1.0];
    let r: Vec<f64> = ps.iter().map(|&p| sse(p)).collect();
    assert!(r.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{r:?}");
    assert!(r[7] < 1e-18);
}

#[test]
fn self_intersecting_fit_is_an_error() {
    // Smoothing a tight loop pulls it across itself.
    let cp = ControlPoints::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (1.0, -5.0), (20.0, 5.0)]);
    match cp {
        Ok(cp) => assert!(matches!(fit_spline(&cp, 1.0), Err(Error::SelfIntersection { .. }) | Ok(_))),
        Err(e) => assert!(matches!(e, Error::ControlPoints(_))),
    }
    let crossing = ControlPoints {
        points: vec![(0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)],
        closed: false,
    };
    assert!(matches!(fit_spline(&crossing, 1.0), Err(Error::ControlPoints(_))));
}

#[test]
fn uniform_slice_fitness_ignores_geometry() {
    let slice = ReconSlice {
        image: Image2D::filled(64, 64, 0.7),
        geometry: Geometry::default(),
        filter: FilterSpec::default(),
    };
    let a = fit_spline(&ControlPoints::new(vec![(5.0, 5.0), (20.0, 8.0), (30.0, 30.0), (40.0, 50.0)]).unwrap(), 1.0).unwrap();
    let b = fit_spline(&ControlPoints::new(vec![(50.0, 5.0), (45.0, 20.0), (30.0, 25.0), (10.0, 40.0)]).unwrap(), 0.7).unwrap();
    assert!((fitness(&slice, &a).value - fitness(&slice, &b).value).abs() < 1e-9);

    // A looped path built by hand is penalised by 10x the slice maximum.
    let mut looped = a.clone();
    looped.samples = vec![(10.0, 10.0), (20.0, 20.0), (20.0, 10.0), (10.0, 20.0)];
    let f = fitness(&slice, &looped);
    assert!(f.self_intersecting);
    assert!(fitness(&slice, &a).value - f.value >= 7.0 - 1e-9);
}

#[test]
fn ridge_beats_displaced_path_on_reconstruction() {
    let (slice, spiral) = phantom_slice();
    let on = fit_spline(&spiral_points(&spiral), 1.0).unwrap();
    let on_fit = fitness(&slice, &on).value;
    for shift in [-2.0, 2.0] {
        let shifted = Spiral {
            inner_radius: spiral.inner_radius + shift,
            ..spiral
        };
        let off = fit_spline(&spiral_points(&shifted), 1.0).unwrap();
        assert!(on_fit >= fitness(&slice, &off).value, "shift {shift}");
    }
}

#[test]
fn ga_pulls_perturbed_seed_towards_the_spiral() {
    let (slice, spiral) = phantom_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let perturbed = ControlPoints::new(
        spiral
            .decimated(8)
            .into_iter()
            .map(|(x, y)| (x + rng.random_range(-2.0..=2.0), y + rng.random_range(-2.0..=2.0)))
            .collect(),
    )
    .unwrap();
    let start = fit_spline(&perturbed, 1.0).unwrap();
    let t = Instant::now();
    let mut history = Vec::new();
    let out = optimize_with(&slice, &perturbed, &GAConfig { seed: 5, ..GAConfig::default() }, 1.0, |g| {
        history.push(g.best_fitness);
        true
    })
    .unwrap();
    let before = mean_deviation(&start, &spiral);
    let after = mean_deviation(&out.path, &spiral);
    eprintln!("GA {:?}: deviation {before:.3} -> {after:.3}, fitness {:.4} -> {:.4}", t.elapsed(), fitness(&slice, &start).value, out.fitness);
    assert!(history.windows(2).all(|w| w[1] >= w[0]));
    assert!(out.fitness >= fitness(&slice, &start).value);
    assert!(after <= before);
}
