//! The agent's robust best response: a backward explicit scheme whose
//! per-node update is the `H`-collapse of the worst-case generator, an
//! inf-over-constant-volatilities oracle, and a Monte Carlo evaluator for
//! fixed feedback policies.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{locate, GridSpec};
use crate::hamiltonians::Hamiltonians;
use crate::mc::{mean_ci, normal, par_paths, path_rng};
use crate::model::{presets::Table, Interval, ModelSpec, ScalarFn};

/// Terminal payment `ξ(x)` as a function of the final output.
#[derive(Clone)]
pub struct ContractFunction {
    pay: ScalarFn,
    tag: String,
}

impl fmt::Debug for ContractFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContractFunction({})", self.tag)
    }
}

impl ContractFunction {
    pub fn new(tag: impl Into<String>, pay: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { pay: Arc::new(pay), tag: tag.into() }
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self::new(format!("linear:{slope},{intercept}"), move |x| slope * x + intercept)
    }

    pub fn call(strike: f64) -> Self {
        Self::new(format!("call:{strike}"), move |x| (x - strike).max(0.0))
    }

    pub fn tabulated(tag: impl Into<String>, table: Table) -> Self {
        Self::new(tag, move |x| table.eval(x))
    }

    /// `linear:slope,intercept` or `call:strike`. Tabulated contracts need a
    /// file and are built by the caller.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unrecognised contract `{spec}`"));
        let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (kind, nums.as_slice()) {
            ("linear", [s, i]) => Ok(Self::linear(*s, *i)),
            ("call", [k]) => Ok(Self::call(*k)),
            _ => Err(bad()),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.pay)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSolution {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// `value[i][j] = V(t_i, x_j)`; the other fields share the layout.
    pub value: Vec<Vec<f64>>,
    pub z_field: Vec<Vec<f64>>,
    pub effort_field: Vec<Vec<f64>>,
    pub worst_vol_field: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
    /// `e^{κT}(max|U_A(ξ)| + T max c)`.
    pub envelope: f64,
}

impl AgentSolution {
    fn slice_index(&self, t: f64) -> usize {
        let nt = self.times.len() - 1;
        if nt == 0 {
            return 0;
        }
        let horizon = self.times[nt];
        let i = ((t / horizon) * nt as f64 + 1e-9).floor();
        (i.max(0.0) as usize).min(nt)
    }

    fn interp(&self, field: &[Vec<f64>], t: f64, x: f64) -> f64 {
        let row = &field[self.slice_index(t)];
        let (j, w, _) = locate(&self.xs, x);
        if self.xs.len() == 1 {
            return row[0];
        }
        row[j] + w * (row[j + 1] - row[j])
    }

    pub fn value_at(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.value, t, x)
    }

    pub fn effort_at(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.effort_field, t, x)
    }

    pub fn vol_at(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.worst_vol_field, t, x)
    }

    pub fn z_at(&self, t: f64, x: f64) -> f64 {
        self.interp(&self.z_field, t, x)
    }
}

/// Largest `|b|`, `σ²` and `|k|` over the grid nodes and control grids.
fn coefficient_bounds(model: &ModelSpec, grid: &GridSpec, ham: &Hamiltonians) -> (f64, f64, f64) {
    let xs = grid.x_axis();
    let stride = (grid.t_steps / 16).max(1);
    let times: Vec<f64> = (0..=grid.t_steps).step_by(stride).map(|i| grid.time(i)).collect();
    let (mut bmax, mut smax, mut kmax) = (0.0_f64, 0.0_f64, 0.0_f64);
    for &t in &times {
        for &x in &xs {
            for &n in ham.n_grid() {
                let s = model.sigma(t, x, n);
                smax = smax.max(s * s);
                for &a in ham.a_grid() {
                    bmax = bmax.max(model.b(t, x, a, n).abs());
                    kmax = kmax.max(model.k(t, x, a, n).abs());
                }
            }
        }
    }
    (bmax, smax, kmax)
}

struct NodeOut {
    v: f64,
    z: f64,
    a: f64,
    n: f64,
}

fn sweep(ham: &Hamiltonians, xs: &[f64], v: &[f64], t: f64, dt: f64) -> Vec<NodeOut> {
    let model = ham.model();
    let nx = xs.len();
    let dx = xs[1] - xs[0];
    (0..nx)
        .into_par_iter()
        .map(|j| {
            let x = xs[j];
            let fwd = if j + 1 < nx { (v[j + 1] - v[j]) / dx } else { (v[j] - v[j - 1]) / dx };
            let bwd = if j > 0 { (v[j] - v[j - 1]) / dx } else { fwd };
            let zc = if j == 0 {
                fwd
            } else if j == nx - 1 {
                bwd
            } else {
                (v[j + 1] - v[j - 1]) / (2.0 * dx)
            };
            let jc = j.clamp(1, nx - 2);
            let d2 = (v[jc + 1] - 2.0 * v[jc] + v[jc - 1]) / (dx * dx);
            let y = v[j];
            let ctx = ham.point_h(t, x, y);
            let payoff = |a: f64, n: f64| {
                let b = model.b(t, x, a, n);
                let d = if b >= 0.0 { fwd } else { bwd };
                -model.k(t, x, a, n) * y - model.c(t, x, a) + b * d
            };
            let res = ham.h_saddle(&ctx, zc, d2, false, &payoff);
            NodeOut { v: y + dt * res.value, z: zc, a: res.arg_a, n: res.arg_n }
        })
        .collect()
}

/// Backward induction from `V(T, ·) = U_A(ξ(·))`.
pub fn solve_agent(model: &ModelSpec, grid: &GridSpec, contract: &ContractFunction) -> Result<AgentSolution> {
    grid.validate()?;
    model.validate(grid)?;
    let ham = Hamiltonians::new(model, grid);
    let xs = grid.x_axis();
    let dx = grid.dx();
    let dt = grid.dt();
    let nt = grid.t_steps;
    let (bmax, smax, kmax) = coefficient_bounds(model, grid, &ham);
    let rate = bmax / dx + smax / (dx * dx) + kmax;
    if dt * rate > grid.cfl_safety {
        return Err(Error::Stability { dt, max_dt: grid.cfl_safety / rate });
    }
    let terminal: Vec<f64> = xs.iter().map(|&x| model.utility_agent.eval(contract.eval(x))).collect();
    if let Some(j) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("U_A(xi(x)) is not finite at x = {}", xs[j])));
    }
    let t_max = grid.horizon;
    let cmax = xs
        .iter()
        .flat_map(|&x| ham.a_grid().iter().map(move |&a| (x, a)))
        .map(|(x, a)| model.c(0.0, x, a).abs())
        .fold(0.0, f64::max);
    let umax = terminal.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let envelope = (model.growth.kappa.max(kmax) * t_max).exp() * (umax + t_max * cmax);

    let blank = vec![0.0; xs.len()];
    let mut value = vec![blank.clone(); nt + 1];
    let mut z_field = vec![blank.clone(); nt + 1];
    let mut effort_field = vec![blank.clone(); nt + 1];
    let mut worst_vol_field = vec![blank; nt + 1];
    value[nt] = terminal.clone();
    let mut store = |i: usize, out: &[NodeOut]| {
        z_field[i] = out.iter().map(|o| o.z).collect();
        effort_field[i] = out.iter().map(|o| o.a).collect();
        worst_vol_field[i] = out.iter().map(|o| o.n).collect();
    };
    for i in (0..nt).rev() {
        let out = sweep(&ham, &xs, &value[i + 1], grid.time(i + 1), dt);
        store(i + 1, &out);
        value[i] = out.iter().map(|o| o.v).collect();
    }
    let out = sweep(&ham, &xs, &value[0], grid.time(0), 0.0);
    store(0, &out);
    Ok(AgentSolution {
        times: grid.t_axis(),
        xs,
        value,
        z_field,
        effort_field,
        worst_vol_field,
        terminal,
        envelope,
    })
}

/// Pointwise minimum over constant volatilities of the non-robust values.
pub fn inf_of_bsdes_oracle(
    model: &ModelSpec,
    grid: &GridSpec,
    contract: &ContractFunction,
    constant_vols: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if constant_vols.is_empty() {
        return Err(Error::InvalidInput("no constant volatilities given".into()));
    }
    let mut best: Option<Vec<Vec<f64>>> = None;
    for &n in constant_vols {
        if !model.nature_set.contains(n) {
            return Err(Error::Domain(format!("volatility control {n} outside N")));
        }
        let fixed = model.clone().with_nature_set(Interval::point(n));
        let sol = solve_agent(&fixed, grid, contract)?;
        best = Some(match best {
            None => sol.value,
            Some(mut b) => {
                for (row, new) in b.iter_mut().zip(&sol.value) {
                    for (v, w) in row.iter_mut().zip(new) {
                        *v = v.min(*w);
                    }
                }
                b
            }
        });
    }
    Ok(best.unwrap())
}

/// Monte Carlo value of fixed feedback policies:
/// `E[𝒦_T U_A(ξ(X_T)) − ∫ 𝒦_s c ds]` under the drifted dynamics, with the
/// 95% half-width.
#[allow(clippy::too_many_arguments)]
pub fn linear_bsde_closed_form(
    model: &ModelSpec,
    grid: &GridSpec,
    contract: &ContractFunction,
    fixed_a: &(dyn Fn(f64, f64) -> f64 + Sync),
    fixed_n: &(dyn Fn(f64, f64) -> f64 + Sync),
    x0: f64,
    paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if paths == 0 {
        return Err(Error::InvalidInput("paths must be positive".into()));
    }
    let dt = grid.dt();
    let sq = dt.sqrt();
    let samples = par_paths(paths, |p| {
        let mut rng = path_rng(seed, p);
        let (mut x, mut disc, mut running) = (x0, 1.0_f64, 0.0_f64);
        for s in 0..grid.t_steps {
            let t = grid.time(s);
            let a = model.effort_set.clamp(fixed_a(t, x));
            let n = model.nature_set.clamp(fixed_n(t, x));
            running += disc * model.c(t, x, a) * dt;
            let drift = model.b(t, x, a, n);
            let vol = model.sigma(t, x, n);
            disc *= (-model.k(t, x, a, n) * dt).exp();
            x += drift * dt + vol * sq * normal(&mut rng);
        }
        disc * model.utility_agent.eval(contract.eval(x)) - running
    });
    if let Some(p) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { path: p });
    }
    Ok(mean_ci(&samples))
}

/// `V(0, x0) ≥ R0` up to 1e-9.
pub fn participation_check(solution: &AgentSolution, x0: f64, r0: f64) -> bool {
    solution.value_at(0.0, x0) >= r0 - 1e-9
}
