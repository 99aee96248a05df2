//! Cubic smoothing spline in one variable (Reinsch form).
//!
//! Minimises `p * sum (y_i - f(t_i))^2 + (1 - p) * integral f''^2` over
//! natural cubic splines with knots at `t_i`. `p = 1` interpolates, `p = 0`
//! is the least-squares line.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    curvature: Vec<f64>,
}

impl SmoothingSpline {
    /// `knots` strictly increasing, at least 3 of them.
    pub fn fit(knots: &[f64], y: &[f64], p: f64) -> Result<Self> {
        let n = knots.len();
        if n < 3 || y.len() != n {
            return Err(Error::Parameter(format!(
                "smoothing spline needs >= 3 matching knots and values, got {n} and {}",
                y.len()
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("smoothing {p} outside [0, 1]")));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        if h.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Parameter("spline knots must be strictly increasing".into()));
        }
        if p == 0.0 {
            return Ok(Self::least_squares_line(knots, y));
        }

        let m = n - 2;
        // Q is n x m, R is m x m; column j belongs to interior knot j + 1.
        let mut q = DMatrix::<f64>::zeros(n, m);
        let mut r = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let yv = DVector::from_column_slice(y);
        let lhs = &r * p + q.transpose() * &q * (1.0 - p);
        let rhs = q.transpose() * &yv * p;
        let gamma = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Internal("singular smoothing-spline system".into()))?;
        let fitted = &yv - &q * &gamma * ((1.0 - p) / p);

        let mut curvature = vec![0.0; n];
        curvature[1..n - 1].copy_from_slice(gamma.as_slice());
        Ok(Self {
            knots: knots.to_vec(),
            values: fitted.as_slice().to_vec(),
            curvature,
        })
    }

    fn least_squares_line(t: &[f64], y: &[f64]) -> Self {
        let n = t.len() as f64;
        let tm = t.iter().sum::<f64>() / n;
        let ym = y.iter().sum::<f64>() / n;
        let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
        let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
        let slope = sty / stt;
        Self {
            knots: t.to_vec(),
            values: t.iter().map(|v| ym + slope * (v - tm)).collect(),
            curvature: vec![0.0; t.len()],
        }
    }

    /// Fitted values at the knots.
    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn interval(&self, t: f64) -> usize {
        let k = self.knots.partition_point(|&v| v <= t);
        k.clamp(1, self.knots.len() - 1) - 1
    }

    /// Value at `t`; linear extrapolation outside the knots.
    pub fn eval(&self, t: f64) -> f64 {
        let (lo, hi) = self.domain();
        if t < lo {
            return self.values[0] + self.derivative(lo) * (t - lo);
        }
        if t > hi {
            return self.values[self.values.len() - 1] + self.derivative(hi) * (t - hi);
        }
        let i = self.interval(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let a = (t1 - t) / h;
        let b = 1.0 - a;
        let (g0, g1) = (self.curvature[i], self.curvature[i + 1]);
        a * self.values[i] + b * self.values[i + 1] + ((a * a * a - a) * g0 + (b * b * b - b) * g1) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.interval(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let a = ((t1 - t) / h).clamp(0.0, 1.0);
        let b = 1.0 - a;
        (self.values[i + 1] - self.values[i]) / h
            + h / 6.0 * (-(3.0 * a * a - 1.0) * self.curvature[i] + (3.0 * b * b - 1.0) * self.curvature[i + 1])
    }
}
