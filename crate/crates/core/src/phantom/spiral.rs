//! Constant-pitch (Archimedean) spiral used as the rolled-sheet centre line.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// `r(phi) = inner_radius + layer_spacing * phi / 2pi` for
/// `phi in [0, 2pi * num_turns]`, centred at `center = (x, y)` in pixel
/// coordinates (`x` = column, `y` = row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spiral {
    pub center: (f64, f64),
    pub inner_radius: f64,
    pub layer_spacing: f64,
    pub num_turns: f64,
}

/// Closest point on the spiral to a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub phi: f64,
    pub distance: f64,
}

impl Spiral {
    /// Radial growth per radian.
    #[inline]
    pub fn pitch(&self) -> f64 {
        self.layer_spacing / TAU
    }

    #[inline]
    pub fn phi_max(&self) -> f64 {
        TAU * self.num_turns
    }

    #[inline]
    pub fn radius(&self, phi: f64) -> f64 {
        self.inner_radius + self.pitch() * phi
    }

    pub fn outer_radius(&self) -> f64 {
        self.radius(self.phi_max())
    }

    #[inline]
    pub fn point(&self, phi: f64) -> (f64, f64) {
        let r = self.radius(phi);
        let (s, c) = phi.sin_cos();
        (self.center.0 + r * c, self.center.1 + r * s)
    }

    /// Unit tangent in the direction of increasing `phi`.
    pub fn tangent(&self, phi: f64) -> (f64, f64) {
        let a = self.pitch();
        let r = self.radius(phi);
        let (s, c) = phi.sin_cos();
        let (tx, ty) = (a * c - r * s, a * s + r * c);
        let n = tx.hypot(ty);
        (tx / n, ty / n)
    }

    // Antiderivative of sqrt(r^2 + a^2) dr / a.
    fn arc_primitive(&self, r: f64) -> f64 {
        let a = self.pitch();
        let q = (r * r + a * a).sqrt();
        (r * q + a * a * (r + q).ln()) / (2.0 * a)
    }

    /// Arc length from `phi = 0` to `phi`.
    pub fn arc_length_to(&self, phi: f64) -> f64 {
        self.arc_primitive(self.radius(phi)) - self.arc_primitive(self.inner_radius)
    }

    pub fn total_arc_length(&self) -> f64 {
        self.arc_length_to(self.phi_max())
    }

    /// Inverse of [`arc_length_to`](Self::arc_length_to), clamped to the curve.
    pub fn phi_at_arc(&self, arc: f64) -> f64 {
        let total = self.total_arc_length();
        if arc <= 0.0 {
            return 0.0;
        }
        if arc >= total {
            return self.phi_max();
        }
        let a = self.pitch();
        // Speed is monotone in phi, so Newton from a mean-radius guess converges.
        let mut phi = arc / self.radius(self.phi_max() / 2.0).max(1e-9);
        for _ in 0..50 {
            let r = self.radius(phi);
            let step = (self.arc_length_to(phi) - arc) / (r * r + a * a).sqrt();
            phi = (phi - step).clamp(0.0, self.phi_max());
            if step.abs() < 1e-13 {
                break;
            }
        }
        phi
    }

    /// Exact closest point, refined by Newton's method from each radial
    /// candidate and both endpoints.
    pub fn nearest(&self, x: f64, y: f64) -> Nearest {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        let alpha = dy.atan2(dx).rem_euclid(TAU);
        let phi_max = self.phi_max();
        let turns = self.num_turns.ceil() as i64;

        let mut best = Nearest {
            phi: 0.0,
            distance: self.distance_at(0.0, x, y),
        };
        let mut consider = |phi: f64| {
            let d = self.distance_at(phi, x, y);
            if d < best.distance {
                best = Nearest { phi, distance: d };
            }
        };
        consider(phi_max);
        for k in -1..=turns {
            let start = alpha + TAU * k as f64;
            if start < -std::f64::consts::PI || start > phi_max + std::f64::consts::PI {
                continue;
            }
            let phi = self.refine(start.clamp(0.0, phi_max), x, y);
            consider(phi);
        }
        best
    }

    fn distance_at(&self, phi: f64, x: f64, y: f64) -> f64 {
        let (px, py) = self.point(phi);
        (px - x).hypot(py - y)
    }

    fn refine(&self, mut phi: f64, x: f64, y: f64) -> f64 {
        let a = self.pitch();
        let phi_max = self.phi_max();
        for _ in 0..8 {
            let r = self.radius(phi);
            let (s, c) = phi.sin_cos();
            let (ex, ey) = (self.center.0 + r * c - x, self.center.1 + r * s - y);
            let (d1x, d1y) = (a * c - r * s, a * s + r * c);
            let (d2x, d2y) = (-2.0 * a * s - r * c, 2.0 * a * c - r * s);
            let g = ex * d1x + ey * d1y;
            let h = d1x * d1x + d1y * d1y + ex * d2x + ey * d2y;
            if h <= 0.0 {
                break;
            }
            let next = (phi - g / h).clamp(0.0, phi_max);
            if (next - phi).abs() < 1e-12 {
                phi = next;
                break;
            }
            phi = next;
        }
        phi
    }

    /// Points at `per_turn` equal angular steps, always including both ends.
    pub fn decimated(&self, per_turn: usize) -> Vec<(f64, f64)> {
        let step = TAU / per_turn.max(1) as f64;
        let phi_max = self.phi_max();
        let mut pts = Vec::new();
        let mut k = 0usize;
        loop {
            let phi = k as f64 * step;
            if phi >= phi_max - 1e-9 {
                break;
            }
            pts.push(self.point(phi));
            k += 1;
        }
        pts.push(self.point(phi_max));
        pts
    }
}
