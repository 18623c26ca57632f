//! Grid evaluators for the agent Hamiltonians `F`, `F*`, `H` and the
//! principal game Hamiltonians `g`, `G`, with saddle diagnostics and the
//! search-box reductions that keep the sup-inf computations finite.
//!
//! Every sup/inf is taken over an explicit uniform grid, augmented by a
//! closed-form candidate when one is available. Ties within [`TIE_TOL`] of the
//! optimum prefer the injected candidate, then the lexicographically smallest
//! argument; the returned value is the objective at the selected argument.

use crate::error::{Error, Result};
use crate::grid::{uniform_axis, GridSpec};
use crate::model::ModelSpec;

pub const TIE_TOL: f64 = 1e-12;
/// Smallest `(z, γ)` search box.
pub const R_MIN: f64 = 1e-3;
const RADIUS_STEPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleResult {
    pub value: f64,
    pub arg_a: f64,
    pub arg_n: f64,
    pub isaacs_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameResult {
    pub value: f64,
    pub z_star: f64,
    pub gamma_star: f64,
    pub n_star: f64,
}

/// Optimiser of the principal game at one node, with the quantities the
/// solvers store alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameDetail {
    pub result: GameResult,
    pub alpha_star: f64,
    pub f_star: f64,
    pub h: f64,
    /// `F*(z*, σ(n*)²) + ½σ(n*)²γ* − H(z*, γ*)`.
    pub k_rate: f64,
    /// `(z*, γ*)` lies strictly inside the search box.
    pub interior: bool,
}

/// Derivative inputs `(p, p̃, q, q̃, r)` of `g`: `u_x, u_y, u_xx, u_yy, u_xy`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivatives {
    pub p: f64,
    pub p_tilde: f64,
    pub q: f64,
    pub q_tilde: f64,
    pub r: f64,
}

/// `g` is linear in the derivatives for fixed controls; these are its
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameCoeffs {
    pub bx: f64,
    pub axx: f64,
    pub by: f64,
    pub ayy: f64,
    pub axy: f64,
}

impl GameCoeffs {
    #[inline]
    pub fn new(b: f64, sig2: f64, z: f64, gamma: f64, h: f64) -> Self {
        Self {
            bx: b,
            axx: 0.5 * sig2,
            by: 0.5 * sig2 * gamma - h + b * z,
            ayy: 0.5 * z * z * sig2,
            axy: z * sig2,
        }
    }

    #[inline]
    pub fn apply(&self, d: &Derivatives) -> f64 {
        self.bx * d.p + self.axx * d.q + self.by * d.p_tilde + self.ayy * d.q_tilde + self.axy * d.r
    }
}

/// Anything that turns the coefficients of `g` into a value: plain
/// derivatives, or stencils that pick one-sided differences per control.
pub trait DerivativeSource {
    fn contract(&self, c: &GameCoeffs) -> f64;
}

impl DerivativeSource for Derivatives {
    #[inline]
    fn contract(&self, c: &GameCoeffs) -> f64 {
        c.apply(self)
    }
}

#[derive(Clone, Copy)]
struct Entry {
    value: f64,
    rank: u8,
    key: [f64; 3],
}

fn key_less(a: &[f64; 3], b: &[f64; 3]) -> bool {
    for i in 0..3 {
        if a[i] < b[i] {
            return true;
        }
        if a[i] > b[i] {
            return false;
        }
    }
    false
}

/// Index of the selected optimiser under the tie rule.
fn select(entries: &[Entry], maximize: bool) -> usize {
    let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    for e in entries {
        if maximize && e.value > best || !maximize && e.value < best {
            best = e.value;
        }
    }
    let mut pick: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        if !((e.value - best).abs() <= TIE_TOL) && e.value != best {
            continue;
        }
        pick = match pick {
            None => Some(i),
            Some(j) => {
                let c = &entries[j];
                if e.rank < c.rank || e.rank == c.rank && key_less(&e.key, &c.key) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    pick.unwrap_or(0)
}

/// Grid values of a state point, computed once and reused by every
/// Hamiltonian evaluated there.
#[derive(Debug, Clone)]
pub struct PointCtx {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub sig2: Vec<f64>,
    pub tol: f64,
    /// Level set of `σ(n_i)²` as grid values, for each grid node `n_i`.
    pub level: Vec<Vec<f64>>,
}

/// σ-threshold pair of the γ-reduction, with a flag for constant σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaThresholds {
    pub m_neg: f64,
    pub m_pos: f64,
    pub sigma_flat: bool,
}

#[derive(Clone, Debug)]
pub struct Hamiltonians {
    model: ModelSpec,
    a_grid: Vec<f64>,
    n_grid: Vec<f64>,
    z_nodes: usize,
    gamma_nodes: usize,
    level_tol: Option<f64>,
}

impl Hamiltonians {
    pub fn new(model: &ModelSpec, grid: &GridSpec) -> Self {
        Self {
            model: model.clone(),
            a_grid: uniform_axis(model.effort_set.lo, model.effort_set.hi, grid.a_nodes),
            n_grid: uniform_axis(model.nature_set.lo, model.nature_set.hi, grid.n_nodes),
            z_nodes: grid.z_nodes,
            gamma_nodes: grid.gamma_nodes,
            level_tol: grid.level_tol,
        }
    }

    /// Explicit control grids. `a_grid` and `n_grid` must be sorted.
    pub fn with_grids(
        model: &ModelSpec,
        a_grid: Vec<f64>,
        n_grid: Vec<f64>,
        z_nodes: usize,
        gamma_nodes: usize,
    ) -> Self {
        Self {
            model: model.clone(),
            a_grid,
            n_grid,
            z_nodes,
            gamma_nodes,
            level_tol: None,
        }
    }

    pub fn with_level_tol(mut self, tol: Option<f64>) -> Self {
        self.level_tol = tol;
        self
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn a_grid(&self) -> &[f64] {
        &self.a_grid
    }

    pub fn n_grid(&self) -> &[f64] {
        &self.n_grid
    }

    pub fn z_nodes(&self) -> usize {
        self.z_nodes
    }

    pub fn gamma_nodes(&self) -> usize {
        self.gamma_nodes
    }

    fn has_exact_rule(&self) -> bool {
        self.model.effort_rule.as_ref().is_some_and(|r| r.exact)
    }

    #[inline]
    fn f_raw(&self, t: f64, x: f64, y: f64, z: f64, a: f64, n: f64) -> f64 {
        let m = &self.model;
        -m.k(t, x, a, n) * y - m.c(t, x, a) + m.b(t, x, a, n) * z
    }

    pub fn eval_f(&self, t: f64, x: f64, y: f64, z: f64, a: f64, n: f64) -> Result<f64> {
        if !self.model.effort_set.contains(a) {
            return Err(Error::Domain(format!("effort {a} outside A")));
        }
        if !self.model.nature_set.contains(n) {
            return Err(Error::Domain(format!("volatility control {n} outside N")));
        }
        Ok(self.f_raw(t, x, y, z, a, n))
    }

    /// `Δn · max|Δσ²|` over consecutive grid nodes, floored at 1e-12.
    pub fn default_level_tol(&self, sig2: &[f64]) -> f64 {
        if sig2.len() < 2 {
            return 1e-12;
        }
        let dn = (self.n_grid[self.n_grid.len() - 1] - self.n_grid[0]) / (self.n_grid.len() - 1) as f64;
        let lip = sig2.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        (dn * lip).max(1e-12)
    }

    pub fn point(&self, t: f64, x: f64, y: f64) -> PointCtx {
        let sig2: Vec<f64> = self
            .n_grid
            .iter()
            .map(|&n| {
                let s = self.model.sigma(t, x, n);
                s * s
            })
            .collect();
        let tol = self.level_tol.unwrap_or_else(|| self.default_level_tol(&sig2));
        let level = sig2
            .iter()
            .map(|&s| {
                self.n_grid
                    .iter()
                    .zip(&sig2)
                    .filter(|(_, &v)| (v - s).abs() <= tol)
                    .map(|(&n, _)| n)
                    .collect()
            })
            .collect();
        PointCtx { t, x, y, sig2, tol, level }
    }

    /// Like [`Hamiltonians::point`] but without level sets; enough for
    /// [`Hamiltonians::h_saddle`].
    pub fn point_h(&self, t: f64, x: f64, y: f64) -> PointCtx {
        let sig2 = self
            .n_grid
            .iter()
            .map(|&n| {
                let s = self.model.sigma(t, x, n);
                s * s
            })
            .collect();
        PointCtx { t, x, y, sig2, tol: 0.0, level: Vec::new() }
    }

    fn level_in(&self, ctx: &PointCtx, sigma_sq: f64, tol: f64) -> Vec<f64> {
        self.n_grid
            .iter()
            .zip(&ctx.sig2)
            .filter(|(_, &v)| (v - sigma_sq).abs() <= tol)
            .map(|(&n, _)| n)
            .collect()
    }

    /// Grid points `n` with `|σ(t,x,n)² − Σ| ≤ tol`; the default tolerance
    /// is resolution-consistent.
    pub fn level_set(&self, t: f64, x: f64, sigma_sq: f64, tol: Option<f64>) -> Vec<f64> {
        let ctx = self.point(t, x, 0.0);
        let tol = tol.unwrap_or(ctx.tol);
        self.level_in(&ctx, sigma_sq, tol)
    }

    fn rule_candidate(&self, ctx: &PointCtx, z: f64, n: f64) -> Option<f64> {
        self.model
            .effort_rule
            .as_ref()
            .map(|r| self.model.effort_set.clamp((r.rule)(ctx.t, ctx.x, ctx.y, z, n)))
    }

    /// `max_a payoff(a, n)` over the a-grid plus the closed-form candidate
    /// for `z_rule`. Returns `(value, argmax)`.
    pub fn max_over_a<P: Fn(f64, f64) -> f64>(
        &self,
        ctx: &PointCtx,
        z_rule: f64,
        n: f64,
        exact: bool,
        payoff: &P,
    ) -> (f64, f64) {
        let cand = self.rule_candidate(ctx, z_rule, n);
        if let (true, Some(a)) = (exact, cand) {
            return (payoff(a, n), a);
        }
        let mut entries: Vec<Entry> = self
            .a_grid
            .iter()
            .map(|&a| Entry { value: payoff(a, n), rank: 1, key: [a, 0.0, 0.0] })
            .collect();
        if let Some(a) = cand {
            entries.push(Entry { value: payoff(a, n), rank: 0, key: [a, 0.0, 0.0] });
        }
        let i = select(&entries, true);
        (entries[i].value, entries[i].key[0])
    }

    /// `max_a min_{n ∈ level} F`, with the inf-sup gap when `with_gap`.
    fn f_star_over(&self, ctx: &PointCtx, z: f64, level: &[f64], with_gap: bool) -> SaddleResult {
        let (t, x, y) = (ctx.t, ctx.x, ctx.y);
        let payoff = |a: f64, n: f64| self.f_raw(t, x, y, z, a, n);
        if level.len() == 1 {
            let n = level[0];
            let (value, a) = self.max_over_a(ctx, z, n, self.has_exact_rule(), &payoff);
            return SaddleResult { value, arg_a: a, arg_n: n, isaacs_gap: 0.0 };
        }
        let mut a_cands: Vec<(f64, u8)> = self.a_grid.iter().map(|&a| (a, 1)).collect();
        for &n in level {
            if let Some(a) = self.rule_candidate(ctx, z, n) {
                a_cands.push((a, 0));
            }
        }
        let mut outer = Vec::with_capacity(a_cands.len());
        let mut inner_arg = Vec::with_capacity(a_cands.len());
        let mut inner = Vec::with_capacity(level.len());
        for &(a, rank) in &a_cands {
            inner.clear();
            inner.extend(level.iter().map(|&n| Entry { value: payoff(a, n), rank: 0, key: [n, 0.0, 0.0] }));
            let j = select(&inner, false);
            outer.push(Entry { value: inner[j].value, rank, key: [a, 0.0, 0.0] });
            inner_arg.push(inner[j].key[0]);
        }
        let i = select(&outer, true);
        let value = outer[i].value;
        let mut gap = 0.0;
        if with_gap {
            let mut maxes: Vec<Entry> = Vec::with_capacity(level.len());
            for &n in level {
                let per_n: Vec<Entry> = a_cands
                    .iter()
                    .map(|&(a, rank)| Entry { value: payoff(a, n), rank, key: [a, 0.0, 0.0] })
                    .collect();
                let k = select(&per_n, true);
                maxes.push(Entry { value: per_n[k].value, rank: 0, key: [n, 0.0, 0.0] });
            }
            let k = select(&maxes, false);
            gap = (maxes[k].value - value).max(0.0);
        }
        SaddleResult { value, arg_a: outer[i].key[0], arg_n: inner_arg[i], isaacs_gap: gap }
    }

    fn level_for_sigma(&self, ctx: &PointCtx, sigma_sq: f64) -> Result<Vec<f64>> {
        let level = self.level_in(ctx, sigma_sq, ctx.tol);
        if level.is_empty() {
            return Err(Error::SigmaUnattainable { sigma_sq });
        }
        Ok(level)
    }

    pub fn eval_f_star(&self, t: f64, x: f64, y: f64, z: f64, sigma_sq: f64) -> Result<SaddleResult> {
        let ctx = self.point(t, x, y);
        let level = self.level_for_sigma(&ctx, sigma_sq)?;
        Ok(self.f_star_over(&ctx, z, &level, true))
    }

    pub fn check_isaacs(&self, t: f64, x: f64, y: f64, z: f64, sigma_sq: f64) -> Result<f64> {
        Ok(self.eval_f_star(t, x, y, z, sigma_sq)?.isaacs_gap)
    }

    /// `min_n [½σ_n²γ + max_a payoff(a, n)]`; `z_rule` feeds the effort
    /// candidate. The gap field is left at zero.
    pub fn h_saddle<P: Fn(f64, f64) -> f64>(
        &self,
        ctx: &PointCtx,
        z_rule: f64,
        gamma: f64,
        exact: bool,
        payoff: &P,
    ) -> SaddleResult {
        let mut entries = Vec::with_capacity(self.n_grid.len());
        let mut args = Vec::with_capacity(self.n_grid.len());
        for (i, &n) in self.n_grid.iter().enumerate() {
            let (fmax, a) = self.max_over_a(ctx, z_rule, n, exact, payoff);
            entries.push(Entry { value: 0.5 * ctx.sig2[i] * gamma + fmax, rank: 0, key: [n, 0.0, 0.0] });
            args.push(a);
        }
        let i = select(&entries, false);
        SaddleResult { value: entries[i].value, arg_a: args[i], arg_n: entries[i].key[0], isaacs_gap: 0.0 }
    }

    fn h_from_fmax(&self, ctx: &PointCtx, gamma: f64, fmax: &[f64]) -> (f64, usize) {
        let entries: Vec<Entry> = self
            .n_grid
            .iter()
            .enumerate()
            .map(|(i, &n)| Entry { value: 0.5 * ctx.sig2[i] * gamma + fmax[i], rank: 0, key: [n, 0.0, 0.0] })
            .collect();
        let i = select(&entries, false);
        (entries[i].value, i)
    }

    fn fmax_all(&self, ctx: &PointCtx, z: f64) -> (Vec<f64>, Vec<f64>) {
        let (t, x, y) = (ctx.t, ctx.x, ctx.y);
        let payoff = |a: f64, n: f64| self.f_raw(t, x, y, z, a, n);
        let exact = self.has_exact_rule();
        self.n_grid.iter().map(|&n| self.max_over_a(ctx, z, n, exact, &payoff)).unzip()
    }

    pub fn eval_h(&self, t: f64, x: f64, y: f64, z: f64, gamma: f64) -> SaddleResult {
        let ctx = self.point(t, x, y);
        let payoff = |a: f64, n: f64| self.f_raw(t, x, y, z, a, n);
        let mut res = self.h_saddle(&ctx, z, gamma, self.has_exact_rule(), &payoff);
        let i = self.n_grid.iter().position(|&n| n == res.arg_n).unwrap_or(0);
        res.isaacs_gap = self.f_star_over(&ctx, z, &ctx.level[i], true).isaacs_gap;
        res
    }

    /// `(α*, F*)` at `z` for the level set of grid node `i`.
    fn alpha_star_node(&self, ctx: &PointCtx, z: f64, i: usize, fmax: &[f64], amax: &[f64]) -> (f64, f64) {
        if ctx.level[i].len() == 1 {
            (amax[i], fmax[i])
        } else {
            let r = self.f_star_over(ctx, z, &ctx.level[i], false);
            (r.arg_a, r.value)
        }
    }

    /// `g` with `α*` taken at the level set of `σ(t,x,n)²` (which contains `n`).
    #[allow(clippy::too_many_arguments)]
    pub fn eval_g(&self, t: f64, x: f64, y: f64, d: &Derivatives, z: f64, gamma: f64, n: f64) -> f64 {
        let ctx = self.point(t, x, y);
        let (fmax, amax) = self.fmax_all(&ctx, z);
        let (h, _) = self.h_from_fmax(&ctx, gamma, &fmax);
        let alpha = match self.n_grid.iter().position(|&v| v == n) {
            Some(i) => self.alpha_star_node(&ctx, z, i, &fmax, &amax).0,
            None => {
                let s = self.model.sigma(t, x, n);
                let mut level = self.level_in(&ctx, s * s, ctx.tol);
                let pos = level.partition_point(|&v| v < n);
                level.insert(pos, n);
                self.f_star_over(&ctx, z, &level, false).arg_a
            }
        };
        let s = self.model.sigma(t, x, n);
        let b = self.model.b(t, x, alpha, n);
        GameCoeffs::new(b, s * s, z, gamma, h).apply(d)
    }

    /// `sup_{(z,γ)} inf_n g` over the box `[-R, R]²` with the candidate
    /// `cand` injected into both axes. `visit` sees the coefficients of every
    /// control evaluated.
    pub fn game<D: DerivativeSource, V: FnMut(&GameCoeffs)>(
        &self,
        ctx: &PointCtx,
        d: &D,
        radius: f64,
        cand: (f64, f64),
        mut visit: V,
    ) -> GameDetail {
        let axis = |nodes: usize, c: f64| -> Vec<(f64, bool)> {
            let mut v: Vec<(f64, bool)> = uniform_axis(-radius, radius, nodes).into_iter().map(|z| (z, false)).collect();
            v.push((c.clamp(-radius, radius), true));
            v
        };
        let zs = axis(self.z_nodes, cand.0);
        let gs = axis(self.gamma_nodes, cand.1);
        let nn = self.n_grid.len();
        let mut outer: Vec<Entry> = Vec::with_capacity(zs.len() * gs.len());
        let mut meta: Vec<(usize, usize, f64)> = Vec::with_capacity(zs.len() * gs.len());
        let mut zdata: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(zs.len());
        let mut inner: Vec<Entry> = Vec::with_capacity(nn);
        for (zi, &(z, zc)) in zs.iter().enumerate() {
            let (fmax, amax) = self.fmax_all(ctx, z);
            let mut bs = Vec::with_capacity(nn);
            let mut alphas = Vec::with_capacity(nn);
            let mut fstars = Vec::with_capacity(nn);
            for i in 0..nn {
                let (a, fs) = self.alpha_star_node(ctx, z, i, &fmax, &amax);
                bs.push(self.model.b(ctx.t, ctx.x, a, self.n_grid[i]));
                alphas.push(a);
                fstars.push(fs);
            }
            for &(gamma, gc) in &gs {
                let (h, _) = self.h_from_fmax(ctx, gamma, &fmax);
                inner.clear();
                for i in 0..nn {
                    let coeffs = GameCoeffs::new(bs[i], ctx.sig2[i], z, gamma, h);
                    visit(&coeffs);
                    inner.push(Entry { value: d.contract(&coeffs), rank: 0, key: [self.n_grid[i], 0.0, 0.0] });
                }
                let j = select(&inner, false);
                outer.push(Entry {
                    value: inner[j].value,
                    rank: (!zc) as u8 + (!gc) as u8,
                    key: [z, gamma, self.n_grid[j]],
                });
                meta.push((zi, j, h));
            }
            zdata.push((alphas, fstars, fmax));
        }
        let k = select(&outer, true);
        let e = outer[k];
        let (zi, j, h) = meta[k];
        let (z, gamma) = (e.key[0], e.key[1]);
        let alpha_star = zdata[zi].0[j];
        let f_star = zdata[zi].1[j];
        let k_rate = f_star + 0.5 * ctx.sig2[j] * gamma - h;
        GameDetail {
            result: GameResult { value: e.value, z_star: z, gamma_star: gamma, n_star: e.key[2] },
            alpha_star,
            f_star,
            h,
            k_rate,
            interior: z.abs() < radius && gamma.abs() < radius,
        }
    }

    #[allow(non_snake_case)]
    pub fn eval_G(&self, t: f64, x: f64, y: f64, d: &Derivatives, radius: f64) -> Result<GameResult> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
        }
        let ctx = self.point(t, x, y);
        Ok(self.game(&ctx, d, radius, (d.p, d.q), |_| {}).result)
    }

    pub fn compute_radius(&self, t: f64, x: f64, y: f64, d: &Derivatives) -> Result<f64> {
        if self.model.risk_neutral {
            return Ok(d.p.abs().max(d.q.abs()).max(R_MIN));
        }
        let ctx = self.point(t, x, y);
        self.compute_radius_ctx(&ctx, d)
    }

    /// Expanding search: the first `R₀·2^j` such that steps `j` and `j+1`
    /// are both settled, a step being settled when its argmax is interior or
    /// its value no longer moves.
    pub fn compute_radius_ctx(&self, ctx: &PointCtx, d: &Derivatives) -> Result<f64> {
        if self.model.risk_neutral {
            return Ok(d.p.abs().max(d.q.abs()).max(R_MIN));
        }
        if !(d.q_tilde < 0.0) {
            return Err(Error::CoercivityNotGuaranteed { q_tilde: d.q_tilde });
        }
        let r0 = R_MIN.max(d.p.abs()).max(d.q.abs());
        let mut prev: Option<(f64, bool)> = None;
        let mut r = r0;
        for _ in 0..RADIUS_STEPS {
            let det = self.game(ctx, d, r, (d.p, d.q), |_| {});
            let v = det.result.value;
            let plateau = prev.is_some_and(|(pv, _)| (v - pv).abs() <= 1e-12 * (1.0 + v.abs()));
            let settled = det.interior || plateau;
            if let Some((_, prev_settled)) = prev {
                if prev_settled && settled {
                    return Ok(r / 2.0);
                }
            }
            prev = Some((v, settled));
            r *= 2.0;
        }
        Err(Error::RadiusNotCertified { last_radius: r / 2.0 })
    }

    /// `α*` at `z` for the volatility `σ(t,x,n)²`, with `ctx` from
    /// [`Hamiltonians::point_h`].
    pub fn effort_at_ctx(&self, ctx: &PointCtx, z: f64, n: f64) -> f64 {
        let tol = self.level_tol.unwrap_or_else(|| self.default_level_tol(&ctx.sig2));
        let s = self.model.sigma(ctx.t, ctx.x, n);
        let mut level = self.level_in(ctx, s * s, tol);
        if !level.contains(&n) {
            let pos = level.partition_point(|&v| v < n);
            level.insert(pos, n);
        }
        self.f_star_over(ctx, z, &level, false).arg_a
    }

    /// `H(t, x, y, z, γ)` with `ctx` from [`Hamiltonians::point_h`].
    pub fn h_value_ctx(&self, ctx: &PointCtx, z: f64, gamma: f64) -> f64 {
        let (t, x, y) = (ctx.t, ctx.x, ctx.y);
        let payoff = |a: f64, n: f64| self.f_raw(t, x, y, z, a, n);
        self.h_saddle(ctx, z, gamma, self.has_exact_rule(), &payoff).value
    }

    /// `(a*, bound_ok)`: the effort maximiser of `F*` and whether it obeys the
    /// growth envelope.
    pub fn optimal_effort(&self, t: f64, x: f64, y: f64, z: f64, sigma_sq: f64) -> Result<(f64, bool)> {
        let a = self.eval_f_star(t, x, y, z, sigma_sq)?.arg_a;
        Ok((a, a.abs() <= self.model.growth.effort_envelope(z)))
    }
}

/// Thresholds `(m, M)` such that the grid argmin of `γσ² − q` sits at the
/// σ-minimiser for `γ > M` and at the σ-maximiser for `γ < m`.
pub fn gamma_thresholds(
    sigma: &dyn Fn(f64) -> f64,
    q: &dyn Fn(f64) -> f64,
    n_grid: &[f64],
) -> Result<GammaThresholds> {
    if n_grid.is_empty() {
        return Err(Error::InvalidInput("empty n grid".into()));
    }
    let s: Vec<f64> = n_grid.iter().map(|&n| sigma(n)).collect();
    let qs: Vec<f64> = n_grid.iter().map(|&n| q(n)).collect();
    if s.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("sigma profile must be strictly positive".into()));
    }
    let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let s_max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if s_max - s_min <= 1e-14 * s_max {
        return Ok(GammaThresholds { m_neg: f64::NEG_INFINITY, m_pos: f64::INFINITY, sigma_flat: true });
    }
    // Among σ-minimisers take the largest q, among σ-maximisers the smallest.
    let lo = (0..s.len())
        .filter(|&i| s[i] == s_min)
        .fold(None, |acc: Option<usize>, i| match acc {
            Some(j) if qs[j] >= qs[i] => Some(j),
            _ => Some(i),
        })
        .unwrap();
    let hi = (0..s.len())
        .filter(|&i| s[i] == s_max)
        .fold(None, |acc: Option<usize>, i| match acc {
            Some(j) if qs[j] <= qs[i] => Some(j),
            _ => Some(i),
        })
        .unwrap();
    let bound = |anchor: usize| -> f64 {
        let quot = |i: usize| (qs[i] - qs[anchor]) / (s[i] - s[anchor]);
        let mut m = 0.0_f64;
        for i in 0..s.len() {
            if s[i] != s[anchor] {
                m = m.max(quot(i).abs());
            }
        }
        // The anchor value is the limit, estimated from its grid neighbours.
        let neighbours: Vec<f64> = [anchor.checked_sub(1), Some(anchor + 1)]
            .into_iter()
            .flatten()
            .filter(|&i| i < s.len() && s[i] != s[anchor])
            .map(quot)
            .collect();
        if !neighbours.is_empty() {
            let lim = neighbours.iter().sum::<f64>() / neighbours.len() as f64;
            m = m.max(lim.abs());
        }
        m
    };
    let denom = 2.0 * s[lo];
    Ok(GammaThresholds {
        m_neg: -bound(hi) / denom,
        m_pos: bound(lo) / denom,
        sigma_flat: false,
    })
}
