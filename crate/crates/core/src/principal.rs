//! The principal's HJBI equation on the bounded `(x, y)` domain: an explicit
//! backward scheme whose node update is the game Hamiltonian `G` of the
//! stencil derivatives, policy extraction and the `Y₀` scan.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{locate, GridSpec};
use crate::hamiltonians::{DerivativeSource, Derivatives, GameCoeffs, GameDetail, Hamiltonians};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalSolution {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `u[i][j * ny + k] = u(t_i, x_j, y_k)`; the policy fields share the layout.
    pub u: Vec<Vec<f64>>,
    pub z_policy: Vec<Vec<f64>>,
    pub gamma_policy: Vec<Vec<f64>>,
    pub nature_policy: Vec<Vec<f64>>,
    pub effort_policy: Vec<Vec<f64>>,
    pub k_rate: Vec<Vec<f64>>,
    /// Nodes where the radius search failed and the configured cap was used.
    pub radius_fallbacks: usize,
}

impl PrincipalSolution {
    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn slice_index(&self, t: f64) -> usize {
        slice_index(&self.times, t)
    }

    /// Bilinear interpolation of `field` at slice `i`, clamped to the domain.
    pub fn interp(&self, field: &[Vec<f64>], i: usize, x: f64, y: f64) -> (f64, bool) {
        bilinear(&self.xs, &self.ys, &field[i], x, y)
    }

    /// `u(t, x, y)`, linear in time between slices.
    pub fn u_at(&self, t: f64, x: f64, y: f64) -> f64 {
        let nt = self.times.len() - 1;
        if nt == 0 {
            return self.interp(&self.u, 0, x, y).0;
        }
        let h = self.horizon();
        let s = (t / h * nt as f64).clamp(0.0, nt as f64);
        let i = (s.floor() as usize).min(nt - 1);
        let w = s - i as f64;
        let a = self.interp(&self.u, i, x, y).0;
        let b = self.interp(&self.u, i + 1, x, y).0;
        a + w * (b - a)
    }

    pub fn u0_at(&self, x: f64, y: f64) -> f64 {
        self.interp(&self.u, 0, x, y).0
    }

    /// Policy fields at time `t`: piecewise constant on slices.
    pub fn policy_at(&self, t: f64, x: f64, y: f64) -> PolicyPoint {
        let i = self.slice_index(t);
        let (z, c) = self.interp(&self.z_policy, i, x, y);
        let (gamma, _) = self.interp(&self.gamma_policy, i, x, y);
        let (n, _) = self.interp(&self.nature_policy, i, x, y);
        let (k_rate, _) = self.interp(&self.k_rate, i, x, y);
        PolicyPoint { z, gamma, n, k_rate, clamped: c }
    }
}

fn slice_index(times: &[f64], t: f64) -> usize {
    let nt = times.len() - 1;
    if nt == 0 {
        return 0;
    }
    let h = times[nt];
    let i = (t / h * nt as f64 + 1e-9).floor();
    (i.max(0.0) as usize).min(nt)
}

fn bilinear(xs: &[f64], ys: &[f64], row: &[f64], x: f64, y: f64) -> (f64, bool) {
    let ny = ys.len();
    let (j, wx, cx) = locate(xs, x);
    let (k, wy, cy) = locate(ys, y);
    let at = |a: usize, b: usize| row[a * ny + b];
    let v00 = at(j, k);
    let v01 = at(j, k + 1);
    let v10 = at(j + 1, k);
    let v11 = at(j + 1, k + 1);
    let v0 = v00 + wy * (v01 - v00);
    let v1 = v10 + wy * (v11 - v10);
    (v0 + wx * (v1 - v0), cx || cy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyPoint {
    pub z: f64,
    pub gamma: f64,
    pub n: f64,
    pub k_rate: f64,
    /// The query point was outside the policy grid and was clamped.
    pub clamped: bool,
}

enum PolicySource {
    Grid(Arc<PrincipalSolution>),
    Constant(PolicyPoint),
}

/// `(Y₀, Z, Γ)` policy with the `K` rate, as feedback maps `(t, x, y)`.
#[derive(Clone)]
pub struct ContractPolicy {
    pub y0: f64,
    source: Arc<PolicySource>,
    /// `y0` sits on the edge of the y-domain.
    pub y0_on_edge: bool,
}

impl std::fmt::Debug for ContractPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContractPolicy").field("y0", &self.y0).field("y0_on_edge", &self.y0_on_edge).finish()
    }
}

impl ContractPolicy {
    /// The same controls at every `(t, x, y)`.
    pub fn constant(y0: f64, z: f64, gamma: f64, n: f64, k_rate: f64) -> Self {
        Self {
            y0,
            source: Arc::new(PolicySource::Constant(PolicyPoint { z, gamma, n, k_rate, clamped: false })),
            y0_on_edge: false,
        }
    }

    pub fn at(&self, t: f64, x: f64, y: f64) -> PolicyPoint {
        match &*self.source {
            PolicySource::Grid(sol) => sol.policy_at(t, x, y),
            PolicySource::Constant(p) => *p,
        }
    }

    pub fn solution(&self) -> Option<&PrincipalSolution> {
        match &*self.source {
            PolicySource::Grid(sol) => Some(sol),
            PolicySource::Constant(_) => None,
        }
    }
}

/// One-sided first differences, central second differences and both
/// sign-dependent cross stencils at a node.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    px_f: f64,
    px_b: f64,
    py_f: f64,
    py_b: f64,
    q: f64,
    qt: f64,
    r_pos: f64,
    r_neg: f64,
}

impl DerivativeSource for Stencil {
    #[inline]
    fn contract(&self, c: &GameCoeffs) -> f64 {
        let p = if c.bx >= 0.0 { self.px_f } else { self.px_b };
        let pt = if c.by >= 0.0 { self.py_f } else { self.py_b };
        let r = if c.axy >= 0.0 { self.r_pos } else { self.r_neg };
        c.bx * p + c.axx * self.q + c.by * pt + c.ayy * self.qt + c.axy * r
    }
}

/// Result of one node update.
#[derive(Debug, Clone, Copy)]
pub struct NodeUpdate {
    pub value: f64,
    pub detail: GameDetail,
    /// Largest stability weight over the controls evaluated.
    pub weight: f64,
    pub radius: f64,
    pub fallback: bool,
}

/// The explicit HJBI scheme; exposed so single node updates can be probed.
#[derive(Clone, Debug)]
pub struct HjbiScheme {
    ham: Hamiltonians,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    dx: f64,
    dy: f64,
    radius_cap: f64,
}

impl HjbiScheme {
    pub fn new(model: &ModelSpec, grid: &GridSpec) -> Self {
        Self {
            ham: Hamiltonians::new(model, grid),
            xs: grid.x_axis(),
            ys: grid.y_axis(),
            dx: grid.dx(),
            dy: grid.dy(),
            radius_cap: grid.radius_cap,
        }
    }

    pub fn hamiltonians(&self) -> &Hamiltonians {
        &self.ham
    }

    fn stencil(&self, u: &[f64], j: usize, k: usize) -> (Stencil, Derivatives) {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let (dx, dy) = (self.dx, self.dy);
        let at = |a: usize, b: usize| u[a * ny + b];
        let c = at(j, k);
        let px_f = if j + 1 < nx { (at(j + 1, k) - c) / dx } else { (c - at(j - 1, k)) / dx };
        let px_b = if j > 0 { (c - at(j - 1, k)) / dx } else { px_f };
        let py_f = if k + 1 < ny { (at(j, k + 1) - c) / dy } else { (c - at(j, k - 1)) / dy };
        let py_b = if k > 0 { (c - at(j, k - 1)) / dy } else { py_f };
        let px_c = if j == 0 || j == nx - 1 { px_f } else { (at(j + 1, k) - at(j - 1, k)) / (2.0 * dx) };
        let py_c = if k == 0 || k == ny - 1 { py_f } else { (at(j, k + 1) - at(j, k - 1)) / (2.0 * dy) };
        let jc = j.clamp(1, nx - 2);
        let kc = k.clamp(1, ny - 2);
        let m = at(jc, kc);
        let q = (at(jc + 1, kc) - 2.0 * m + at(jc - 1, kc)) / (dx * dx);
        let qt = (at(jc, kc + 1) - 2.0 * m + at(jc, kc - 1)) / (dy * dy);
        let axes = at(jc + 1, kc) + at(jc - 1, kc) + at(jc, kc + 1) + at(jc, kc - 1);
        let h = 2.0 * dx * dy;
        let r_pos = (2.0 * m + at(jc + 1, kc + 1) + at(jc - 1, kc - 1) - axes) / h;
        let r_neg = -(2.0 * m + at(jc + 1, kc - 1) + at(jc - 1, kc + 1) - axes) / h;
        let r_c = (at(jc + 1, kc + 1) - at(jc + 1, kc - 1) - at(jc - 1, kc + 1) + at(jc - 1, kc - 1)) / (2.0 * h);
        (
            Stencil { px_f, px_b, py_f, py_b, q, qt, r_pos, r_neg },
            Derivatives { p: px_c, p_tilde: py_c, q, q_tilde: qt, r: r_c },
        )
    }

    /// `u(t - dt)` at node `(j, k)` from the slice `u_next` at `t`.
    pub fn node_update(&self, u_next: &[f64], t: f64, dt: f64, j: usize, k: usize) -> NodeUpdate {
        let (st, central) = self.stencil(u_next, j, k);
        let (x, y) = (self.xs[j], self.ys[k]);
        let ctx = self.ham.point(t, x, y);
        let (radius, fallback) = match self.ham.compute_radius_ctx(&ctx, &central) {
            // The box must contain every one-sided candidate, else a bump that
            // pulls the central difference in can shrink it and lower the value.
            Ok(r) => (r.max(st.px_f.abs()).max(st.px_b.abs()).min(self.radius_cap), false),
            Err(_) => (self.radius_cap, true),
        };
        let (dx, dy) = (self.dx, self.dy);
        let mut weight = f64::NEG_INFINITY;
        let detail = self.ham.game(&ctx, &st, radius, (central.p, central.q), |c| {
            let w = c.bx.abs() / dx + c.by.abs() / dy + 2.0 * c.axx / (dx * dx) + 2.0 * c.ayy / (dy * dy)
                - c.axy.abs() / (dx * dy);
            weight = weight.max(w);
        });
        let value = u_next[j * self.ys.len() + k] + dt * detail.result.value;
        NodeUpdate { value, detail, weight, radius, fallback }
    }

    fn sweep(&self, u_next: &[f64], t: f64, dt: f64) -> Vec<NodeUpdate> {
        let ny = self.ys.len();
        (0..self.xs.len() * ny)
            .into_par_iter()
            .map(|idx| self.node_update(u_next, t, dt, idx / ny, idx % ny))
            .collect()
    }
}

/// `U_P(L(x) − U_A^{-1}(y))` on the grid.
pub fn terminal_slice(model: &ModelSpec, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    let inv: Vec<f64> = ys
        .iter()
        .map(|&y| {
            model
                .utility_agent
                .inverse(y)
                .ok_or_else(|| Error::Domain(format!("U_A^-1 is not finite at y = {y}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &x in xs {
        let l = model.liquidate(x);
        for &iy in &inv {
            out.push(model.utility_principal.eval(l - iy));
        }
    }
    Ok(out)
}

/// Backward induction for `u`, with policies recorded per slice.
pub fn solve_hjbi(model: &ModelSpec, grid: &GridSpec) -> Result<PrincipalSolution> {
    grid.validate()?;
    model.validate(grid)?;
    if let Some(sup) = model.utility_agent.sup_abs() {
        if grid.y_bound < sup - 1e-12 {
            return Err(Error::InvalidGrid(format!(
                "y_bound {} is below sup |U_A| = {sup}",
                grid.y_bound
            )));
        }
    }
    let scheme = HjbiScheme::new(model, grid);
    let (xs, ys) = (scheme.xs.clone(), scheme.ys.clone());
    let nt = grid.t_steps;
    let dt = grid.dt();
    let size = xs.len() * ys.len();
    let blank = vec![0.0; size];
    let mut u = vec![blank.clone(); nt + 1];
    let mut z_policy = vec![blank.clone(); nt + 1];
    let mut gamma_policy = vec![blank.clone(); nt + 1];
    let mut nature_policy = vec![blank.clone(); nt + 1];
    let mut effort_policy = vec![blank.clone(); nt + 1];
    let mut k_rate = vec![blank; nt + 1];
    u[nt] = terminal_slice(model, &xs, &ys)?;
    let mut fallbacks = 0;
    let mut store = |i: usize, out: &[NodeUpdate]| {
        z_policy[i] = out.iter().map(|o| o.detail.result.z_star).collect();
        gamma_policy[i] = out.iter().map(|o| o.detail.result.gamma_star).collect();
        nature_policy[i] = out.iter().map(|o| o.detail.result.n_star).collect();
        effort_policy[i] = out.iter().map(|o| o.detail.alpha_star).collect();
        k_rate[i] = out.iter().map(|o| o.detail.k_rate).collect();
        out.iter().filter(|o| o.fallback).count()
    };
    for i in (0..nt).rev() {
        let out = scheme.sweep(&u[i + 1], grid.time(i + 1), dt);
        let w = out.iter().map(|o| o.weight).fold(0.0, f64::max);
        if dt * w > grid.cfl_safety {
            return Err(Error::Stability { dt, max_dt: grid.cfl_safety / w });
        }
        if let Some(o) = out.iter().find(|o| !o.value.is_finite()) {
            return Err(Error::Domain(format!("non-finite value {} in slice {i}", o.value)));
        }
        fallbacks += store(i + 1, &out);
        u[i] = out.iter().map(|o| o.value).collect();
    }
    let out = scheme.sweep(&u[0], grid.time(0), 0.0);
    fallbacks += store(0, &out);
    Ok(PrincipalSolution {
        times: grid.t_axis(),
        xs,
        ys,
        u,
        z_policy,
        gamma_policy,
        nature_policy,
        effort_policy,
        k_rate,
        radius_fallbacks: fallbacks,
    })
}

/// Best initial certainty equivalent at `x0` subject to `y ≥ R0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Y0Choice {
    pub y0: f64,
    pub value: f64,
    /// The maximiser is the smallest feasible grid point, as monotonicity in
    /// `y` predicts.
    pub smallest_feasible: bool,
}

pub fn optimize_y0(solution: &PrincipalSolution, x0: f64, r0: f64) -> Result<Y0Choice> {
    let top = solution.ys[solution.ny() - 1];
    if r0 > top + 1e-12 {
        return Err(Error::InfeasibleParticipation { reservation: r0, top });
    }
    let feasible: Vec<(f64, f64)> = solution
        .ys
        .iter()
        .filter(|&&y| y >= r0 - 1e-12)
        .map(|&y| (y, solution.u0_at(x0, y)))
        .collect();
    let best = feasible.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let &(y0, value) = feasible.iter().find(|p| p.1 >= best - 1e-12).unwrap();
    Ok(Y0Choice { y0, value, smallest_feasible: y0 == feasible[0].0 })
}

pub fn extract_contract(solution: Arc<PrincipalSolution>, y0: f64) -> Result<ContractPolicy> {
    let (lo, hi) = (solution.ys[0], solution.ys[solution.ny() - 1]);
    if !(y0 >= lo - 1e-12 && y0 <= hi + 1e-12) {
        return Err(Error::Domain(format!("y0 = {y0} outside [{lo}, {hi}]")));
    }
    let on_edge = (y0 - lo).abs() <= 1e-12 || (y0 - hi).abs() <= 1e-12;
    Ok(ContractPolicy { y0, source: Arc::new(PolicySource::Grid(solution)), y0_on_edge: on_edge })
}

/// Value and derivatives `[v_t, v_x, v_y, v_xx, v_yy, v_xy]` of a smooth
/// comparison function.
pub type CandidateFn = Arc<dyn Fn(f64, f64, f64) -> (f64, [f64; 6]) + Send + Sync>;

#[derive(Clone)]
pub struct SmoothCandidate {
    pub name: String,
    pub eval: CandidateFn,
}

impl SmoothCandidate {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64, f64) -> (f64, [f64; 6]) + Send + Sync + 'static) -> Self {
        Self { name: name.into(), eval: Arc::new(f) }
    }

    pub fn constant(name: impl Into<String>, c: f64) -> Self {
        Self::new(name, move |_, _, _| (c, [0.0; 6]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCheck {
    pub name: String,
    /// Candidate satisfies its PDE inequality and terminal inequality.
    pub valid: bool,
    pub pde_violations: usize,
    pub terminal_violations: usize,
    /// Worst violation of the PDE inequality, of the terminal inequality.
    pub worst_pde: f64,
    pub worst_terminal: f64,
    /// First violating node `(i, j, k)`, if any.
    pub first_violation: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    pub sub: CandidateCheck,
    pub sup: CandidateCheck,
    /// `sub ≤ u ≤ sup` at every node to the tolerance.
    pub ordered: bool,
    pub max_sub_excess: f64,
    pub max_sup_deficit: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.sub.valid && self.sup.valid && self.ordered
    }
}

fn check_candidate(
    model: &ModelSpec,
    grid: &GridSpec,
    sol: &PrincipalSolution,
    cand: &SmoothCandidate,
    sub: bool,
    tol: f64,
) -> Result<CandidateCheck> {
    let ham = Hamiltonians::new(model, grid);
    let terminal = terminal_slice(model, &sol.xs, &sol.ys)?;
    let nt = sol.times.len() - 1;
    let ny = sol.ny();
    let t_end = sol.horizon();
    let sign = if sub { 1.0 } else { -1.0 };
    let mut out = CandidateCheck {
        name: cand.name.clone(),
        valid: true,
        pde_violations: 0,
        terminal_violations: 0,
        worst_pde: 0.0,
        worst_terminal: 0.0,
        first_violation: None,
    };
    for (j, &x) in sol.xs.iter().enumerate() {
        for (k, &y) in sol.ys.iter().enumerate() {
            let (v, _) = (cand.eval)(t_end, x, y);
            let excess = sign * (v - terminal[j * ny + k]);
            if excess > tol {
                out.terminal_violations += 1;
                out.worst_terminal = out.worst_terminal.max(excess);
                out.first_violation.get_or_insert((nt, j, k));
            }
        }
    }
    let nodes: Vec<(usize, usize, usize)> = (0..nt)
        .flat_map(|i| (0..sol.xs.len()).flat_map(move |j| (0..ny).map(move |k| (i, j, k))))
        .collect();
    let residuals: Vec<f64> = nodes
        .par_iter()
        .map(|&(i, j, k)| {
            let (t, x, y) = (sol.times[i], sol.xs[j], sol.ys[k]);
            let (_, d) = (cand.eval)(t, x, y);
            let der = Derivatives { p: d[1], p_tilde: d[2], q: d[3], q_tilde: d[4], r: d[5] };
            let ctx = ham.point(t, x, y);
            let radius = ham.compute_radius_ctx(&ctx, &der).map(|r| r.min(grid.radius_cap)).unwrap_or(grid.radius_cap);
            let g = ham.game(&ctx, &der, radius, (der.p, der.q), |_| {}).result.value;
            // sub: v_t + G ≥ 0; super: v_t + G ≤ 0.
            -sign * (d[0] + g)
        })
        .collect();
    for (n, &r) in nodes.iter().zip(&residuals) {
        if r > tol {
            out.pde_violations += 1;
            out.worst_pde = out.worst_pde.max(r);
            out.first_violation.get_or_insert(*n);
        }
    }
    out.valid = out.pde_violations == 0 && out.terminal_violations == 0;
    Ok(out)
}

/// Check both candidates against their PDE inequalities, then the ordering
/// `sub ≤ u ≤ sup` on the grid.
pub fn perron_sandwich_check(
    model: &ModelSpec,
    grid: &GridSpec,
    solution: &PrincipalSolution,
    sub_candidate: &SmoothCandidate,
    super_candidate: &SmoothCandidate,
    tol: f64,
) -> Result<SandwichReport> {
    let sub = check_candidate(model, grid, solution, sub_candidate, true, tol)?;
    let sup = check_candidate(model, grid, solution, super_candidate, false, tol)?;
    let ny = solution.ny();
    let (mut ex, mut de) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, &t) in solution.times.iter().enumerate() {
        for (j, &x) in solution.xs.iter().enumerate() {
            for (k, &y) in solution.ys.iter().enumerate() {
                let u = solution.u[i][j * ny + k];
                ex = ex.max((sub_candidate.eval)(t, x, y).0 - u);
                de = de.max(u - (super_candidate.eval)(t, x, y).0);
            }
        }
    }
    Ok(SandwichReport { sub, sup, ordered: ex <= tol && de <= tol, max_sub_excess: ex, max_sup_deficit: de })
}
