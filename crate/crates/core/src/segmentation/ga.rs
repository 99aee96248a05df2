use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_spline, fit_spline_unchecked, fitness_of_samples, ControlPoints, SpiralPath, SAMPLE_SPACING};
use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::recon::ReconSlice;

/// Multiplicative decay of the mutation width per generation.
pub const ANNEAL: f64 = 0.99;
const TOURNAMENT: usize = 3;
/// Consecutive all-infeasible generations tolerated before giving up.
const MAX_INFEASIBLE_RUN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GAConfig {
    pub population: usize,
    pub generations: usize,
    /// Initial per-coordinate mutation sd, pixels.
    pub mutation_sd: f64,
    pub elite_count: usize,
    /// Half-width of the uniform jitter applied to the initial copies, pixels.
    pub jitter_box: f64,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        Self {
            population: 64,
            generations: 200,
            mutation_sd: 1.5,
            elite_count: 2,
            jitter_box: 3.0,
            seed: 0,
        }
    }
}

impl GAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.elite_count >= 1 && self.elite_count < self.population) {
            return Err(Error::Parameter(format!(
                "need 1 <= elite_count ({}) < population ({})",
                self.elite_count, self.population
            )));
        }
        if !(self.mutation_sd >= 0.0 && self.mutation_sd.is_finite()) {
            return Err(Error::Parameter("mutation_sd must be non-negative".into()));
        }
        if !(self.jitter_box >= 0.0 && self.jitter_box.is_finite()) {
            return Err(Error::Parameter("jitter_box must be non-negative".into()));
        }
        Ok(())
    }
}

/// Progress snapshot after one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub index: usize,
    /// Best fitness seen so far (non-decreasing).
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub feasible: usize,
    pub best: ControlPoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub path: SpiralPath,
    pub fitness: f64,
    /// Best-so-far fitness after each generation, starting with the
    /// initial population.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Individual {
    points: Vec<(f64, f64)>,
    /// `None` when the control points are invalid.
    fitness: Option<f64>,
}

impl Individual {
    fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }

    fn feasible(&self, penalty_floor: f64) -> bool {
        self.fitness.is_some_and(|f| f > penalty_floor)
    }
}

fn evaluate(image: &Image2D, points: &[(f64, f64)], smoothing: f64) -> Option<f64> {
    let control = ControlPoints {
        points: points.to_vec(),
        closed: false,
    };
    let (path, crossing) = fit_spline_unchecked(&control, smoothing, SAMPLE_SPACING).ok()?;
    Some(fitness_of_samples(image, &path.samples, crossing.is_some()).value)
}

/// Runs the GA to completion; see [`optimize_with`].
pub fn optimize(slice: &ReconSlice, initial: &ControlPoints, ga: &GAConfig, smoothing: f64) -> Result<SpiralPath> {
    Ok(optimize_with(slice, initial, ga, smoothing, |_| true)?.path)
}

/// Elitist GA over control-point lists. `progress` sees every generation
/// and may stop the run early by returning `false`; the best individual
/// found so far is still returned.
pub fn optimize_with(
    slice: &ReconSlice,
    initial: &ControlPoints,
    ga: &GAConfig,
    smoothing: f64,
    mut progress: impl FnMut(&Generation) -> bool,
) -> Result<Optimized> {
    ga.validate()?;
    // Rejects invalid or self-intersecting starting curves.
    fit_spline(initial, smoothing)?;
    let image = &slice.image;
    let penalty_floor = image.min() - super::intersection_penalty(image) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);
    let n_coords = initial.points.len();

    let mut population: Vec<Vec<(f64, f64)>> = Vec::with_capacity(ga.population);
    population.push(initial.points.clone());
    for _ in 1..ga.population {
        population.push(
            initial
                .points
                .iter()
                .map(|&(x, y)| (x + jitter(&mut rng, ga.jitter_box), y + jitter(&mut rng, ga.jitter_box)))
                .collect(),
        );
    }
    let mut scored = score_all(image, population, smoothing);
    sort_desc(&mut scored);
    let mut best = scored[0].clone();
    let mut history = vec![best.score()];
    let mut infeasible_run = 0;
    let mut sd = ga.mutation_sd;

    for generation in 0..ga.generations {
        let mut next: Vec<Vec<(f64, f64)>> = scored[..ga.elite_count].iter().map(|i| i.points.clone()).collect();
        let normal = (sd > 0.0).then(|| Normal::new(0.0, sd).expect("sd is finite and positive"));
        while next.len() < ga.population {
            let a = tournament(&scored, &mut rng);
            let b = tournament(&scored, &mut rng);
            let cut = rng.random_range(1..n_coords);
            let mut child: Vec<(f64, f64)> = scored[a].points[..cut]
                .iter()
                .chain(&scored[b].points[cut..])
                .copied()
                .collect();
            if let Some(normal) = &normal {
                for p in &mut child {
                    p.0 += normal.sample(&mut rng);
                    p.1 += normal.sample(&mut rng);
                }
            }
            next.push(child);
        }
        // Elites are re-scored deterministically; reuse their values.
        let elites: Vec<Individual> = scored[..ga.elite_count].to_vec();
        let mut fresh = score_all(image, next.split_off(ga.elite_count), smoothing);
        fresh.extend(elites);
        scored = fresh;
        sort_desc(&mut scored);
        if scored[0].score() > best.score() {
            best = scored[0].clone();
        }
        history.push(best.score());
        sd *= ANNEAL;

        let feasible = scored.iter().filter(|i| i.feasible(penalty_floor)).count();
        infeasible_run = if feasible == 0 { infeasible_run + 1 } else { 0 };
        if infeasible_run >= MAX_INFEASIBLE_RUN {
            return Err(Error::OptimizationFailed(format!(
                "no feasible individual for {MAX_INFEASIBLE_RUN} consecutive generations (at {generation})"
            )));
        }
        let finite: Vec<f64> = scored.iter().filter_map(|i| i.fitness).collect();
        let report = Generation {
            index: generation,
            best_fitness: best.score(),
            mean_fitness: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            feasible,
            best: ControlPoints {
                points: best.points.clone(),
                closed: false,
            },
        };
        if !progress(&report) {
            break;
        }
    }

    let control = ControlPoints {
        points: best.points,
        closed: false,
    };
    Ok(Optimized {
        path: fit_spline(&control, smoothing)?,
        fitness: history[history.len() - 1],
        history,
    })
}

fn jitter(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn score_all(image: &Image2D, population: Vec<Vec<(f64, f64)>>, smoothing: f64) -> Vec<Individual> {
    population
        .into_par_iter()
        .map(|points| {
            let fitness = evaluate(image, &points, smoothing);
            Individual { points, fitness }
        })
        .collect()
}

/// Stable sort, best first; ties keep their order so runs are reproducible.
fn sort_desc(pop: &mut [Individual]) {
    pop.sort_by(|a, b| b.score().total_cmp(&a.score()));
}

fn tournament(pop: &[Individual], rng: &mut ChaCha8Rng) -> usize {
    (0..TOURNAMENT)
        .map(|_| rng.random_range(0..pop.len()))
        .min()
        .expect("tournament size is positive")
}

/// Optimises slice `reference` first, then walks outwards seeding each
/// slice with its neighbour's result.
pub fn optimize_per_slice(
    slices: &[ReconSlice],
    reference: usize,
    initial: &ControlPoints,
    ga: &GAConfig,
    smoothing: f64,
) -> Result<Vec<SpiralPath>> {
    if reference >= slices.len() {
        return Err(Error::Range {
            what: "reference slice",
            index: reference,
            len: slices.len(),
        });
    }
    let mut out: Vec<Option<SpiralPath>> = vec![None; slices.len()];
    let first = optimize(&slices[reference], initial, ga, smoothing)?;
    let mut seed_up = first.control.clone();
    let mut seed_down = first.control.clone();
    out[reference] = Some(first);
    for z in reference + 1..slices.len() {
        let cfg = GAConfig { seed: ga.seed.wrapping_add(z as u64), ..*ga };
        let p = optimize(&slices[z], &seed_up, &cfg, smoothing)?;
        seed_up = p.control.clone();
        out[z] = Some(p);
    }
    for z in (0..reference).rev() {
        let cfg = GAConfig { seed: ga.seed.wrapping_add(z as u64), ..*ga };
        let p = optimize(&slices[z], &seed_down, &cfg, smoothing)?;
        seed_down = p.control.clone();
        out[z] = Some(p);
    }
    Ok(out.into_iter().map(|p| p.expect("every slice visited")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Geometry;
    use crate::recon::FilterSpec;

    fn ridge_slice() -> ReconSlice {
        // Bright horizontal ridge at row 20.
        ReconSlice {
            image: Image2D::from_fn(40, 60, |r, _| (-((r as f64 - 20.0).powi(2)) / 8.0).exp()),
            geometry: Geometry::default(),
            filter: FilterSpec::default(),
        }
    }

    fn line(row: f64) -> ControlPoints {
        ControlPoints::new((0..6).map(|i| (8.0 + 8.0 * i as f64, row)).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GAConfig::default().validate().is_ok());
        assert!(GAConfig { elite_count: 0, ..GAConfig::default() }.validate().is_err());
        assert!(GAConfig { elite_count: 64, ..GAConfig::default() }.validate().is_err());
    }

    #[test]
    fn frozen_ga_returns_the_initial_spline() {
        let ga = GAConfig {
            mutation_sd: 0.0,
            jitter_box: 0.0,
            generations: 5,
            population: 8,
            ..GAConfig::default()
        };
        let init = line(17.0);
        let out = optimize(&ridge_slice(), &init, &ga, 1.0).unwrap();
        assert_eq!(out, fit_spline(&init, 1.0).unwrap());
    }

    #[test]
    fn climbs_onto_the_ridge_monotonically() {
        let ga = GAConfig {
            population: 24,
            generations: 40,
            seed: 3,
            ..GAConfig::default()
        };
        let mut history = Vec::new();
        let out = optimize_with(&ridge_slice(), &line(17.0), &ga, 0.9, |g| {
            history.push(g.best_fitness);
            true
        })
        .unwrap();
        assert!(history.windows(2).all(|w| w[1] >= w[0]));
        let mean_row = out.path.samples.iter().map(|p| p.1).sum::<f64>() / out.path.samples.len() as f64;
        assert!((mean_row - 20.0).abs() < 1.0, "{mean_row}");
    }

    #[test]
    fn stop_early_on_request() {
        let ga = GAConfig { population: 8, generations: 100, ..GAConfig::default() };
        let mut calls = 0;
        let out = optimize_with(&ridge_slice(), &line(18.0), &ga, 1.0, |_| {
            calls += 1;
            calls < 3
        })
        .unwrap();
        assert_eq!(calls, 3);
        assert_eq!(out.history.len(), 4);
    }
}
