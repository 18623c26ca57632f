//! Time, state and control discretisation.

use crate::error::{Error, Result};

/// `n` uniformly spaced points on `[lo, hi]` with exact endpoints; a single
/// point when the interval is degenerate.
pub fn uniform_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if lo == hi || n <= 1 {
        return vec![lo];
    }
    let last = n - 1;
    (0..n)
        .map(|i| {
            if i == last {
                hi
            } else {
                lo + (hi - lo) * (i as f64 / last as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub horizon: f64,
    pub t_steps: usize,
    pub x_nodes: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_nodes: usize,
    /// `κ_Y`: the y-domain is `[-y_bound, y_bound]`.
    pub y_bound: f64,
    pub a_nodes: usize,
    pub n_nodes: usize,
    pub z_nodes: usize,
    pub gamma_nodes: usize,
    pub cfl_safety: f64,
    /// Upper bound on the `(z, γ)` box used by the principal solver.
    pub radius_cap: f64,
    /// Override of the level-set membership tolerance.
    pub level_tol: Option<f64>,
}

impl GridSpec {
    /// Agent grid on `[-M-2, M+2]` with default control resolutions.
    pub fn agent(horizon: f64, t_steps: usize, x_nodes: usize, truncation: f64) -> Self {
        Self {
            horizon,
            t_steps,
            x_nodes,
            x_lo: -truncation - 2.0,
            x_hi: truncation + 2.0,
            y_nodes: 3,
            y_bound: 1.0,
            a_nodes: 21,
            n_nodes: 11,
            z_nodes: 21,
            gamma_nodes: 21,
            cfl_safety: 1.0,
            radius_cap: 4.0,
            level_tol: None,
        }
    }

    /// Principal grid on `[-M-2, M+2] x [-κ_Y, κ_Y]`.
    pub fn principal(
        horizon: f64,
        t_steps: usize,
        x_nodes: usize,
        y_nodes: usize,
        truncation: f64,
        y_bound: f64,
    ) -> Self {
        Self {
            y_nodes,
            y_bound,
            ..Self::agent(horizon, t_steps, x_nodes, truncation)
        }
    }

    pub fn with_controls(mut self, a: usize, n: usize, z: usize, gamma: usize) -> Self {
        self.a_nodes = a;
        self.n_nodes = n;
        self.z_nodes = z;
        self.gamma_nodes = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGrid(m));
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be nonnegative, got {}", self.horizon));
        }
        if self.t_steps == 0 && self.horizon != 0.0 {
            return bad("zero time steps require a zero horizon".into());
        }
        for (name, v) in [
            ("x_nodes", self.x_nodes),
            ("y_nodes", self.y_nodes),
            ("a_nodes", self.a_nodes),
            ("n_nodes", self.n_nodes),
            ("z_nodes", self.z_nodes),
            ("gamma_nodes", self.gamma_nodes),
        ] {
            if v < 3 {
                return bad(format!("{name} must be at least 3, got {v}"));
            }
        }
        if !(self.x_lo < self.x_hi) {
            return bad("x domain is empty".into());
        }
        if !(self.y_bound > 0.0 && self.y_bound.is_finite()) {
            return bad(format!("y_bound must be positive, got {}", self.y_bound));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety));
        }
        if !(self.radius_cap > 0.0) {
            return bad("radius_cap must be positive".into());
        }
        if let Some(tol) = self.level_tol {
            if !(tol > 0.0) {
                return bad("level_tol must be positive".into());
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        if self.t_steps == 0 {
            0.0
        } else {
            self.horizon / self.t_steps as f64
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        if i >= self.t_steps {
            self.horizon
        } else {
            self.horizon * (i as f64 / self.t_steps as f64)
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.x_nodes - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.y_bound / (self.y_nodes - 1) as f64
    }

    pub fn x_axis(&self) -> Vec<f64> {
        uniform_axis(self.x_lo, self.x_hi, self.x_nodes)
    }

    pub fn y_axis(&self) -> Vec<f64> {
        uniform_axis(-self.y_bound, self.y_bound, self.y_nodes)
    }

    pub fn t_axis(&self) -> Vec<f64> {
        (0..=self.t_steps).map(|i| self.time(i)).collect()
    }
}

/// Locate `v` on a uniform axis: returns the left cell index and the weight
/// of the right node, clamping to the axis. The flag reports clamping.
pub fn locate(axis: &[f64], v: f64) -> (usize, f64, bool) {
    let n = axis.len();
    if n == 1 {
        return (0, 0.0, v != axis[0]);
    }
    let lo = axis[0];
    let hi = axis[n - 1];
    if v <= lo {
        return (0, 0.0, v < lo);
    }
    if v >= hi {
        return (n - 2, 1.0, v > hi);
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut i = ((v - lo) / h).floor() as usize;
    if i > n - 2 {
        i = n - 2;
    }
    let w = ((v - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
    (i, w, false)
}
