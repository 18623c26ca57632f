//! Forward Monte Carlo for the coupled `(X, Y)` system under a contract
//! policy, with the incentive, martingale, change-of-measure and
//! disjoint-beliefs checks built on it.
//!
//! The continuation value follows
//! `dY = (½σ̂²Γ − H(Z, Γ)) dt + Z dX`, which is the contract dynamics with the
//! `K` rate evaluated at the realised volatility `σ̂`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::hamiltonians::Hamiltonians;
use crate::mc::{mean_ci, normal, path_rng};
use crate::model::{Interval, ModelSpec};
use crate::principal::{ContractPolicy, PrincipalSolution};

const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub x0: f64,
    /// Simulate driftless output and reweight by the stochastic exponential.
    pub girsanov_mode: bool,
}

impl SimConfig {
    pub fn steps(&self) -> Result<usize> {
        if self.paths == 0 {
            return Err(Error::InvalidInput("paths must be at least 1".into()));
        }
        if self.horizon == 0.0 {
            return Ok(0);
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::InvalidInput("dt and horizon must be positive".into()));
        }
        let steps = (self.horizon / self.dt).round();
        if steps < 1.0 || (steps * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::InvalidInput(format!("dt = {} does not divide T = {}", self.dt, self.horizon)));
        }
        Ok(steps as usize)
    }
}

/// Piecewise-constant Nature control: `values[i]` on `(τ_{i-1}, τ_i]` with
/// `τ_0 = 0` and the interior cut times in `breakpoints`.
#[derive(Debug, Clone, PartialEq)]
pub struct NatureStrategy {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl NatureStrategy {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidInput("need one more value than breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("breakpoints must increase strictly".into()));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(n: f64) -> Self {
        Self { breakpoints: Vec::new(), values: vec![n] }
    }

    /// `values.len()` equal intervals of `[0, horizon]`.
    pub fn uniform(values: Vec<f64>, horizon: f64) -> Self {
        let m = values.len();
        let breakpoints = (1..m).map(|i| horizon * i as f64 / m as f64).collect();
        Self { breakpoints, values }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b < t);
        self.values[i]
    }

    pub fn validate(&self, nature: &Interval, horizon: f64) -> Result<()> {
        if let Some(v) = self.values.iter().find(|v| !nature.contains(**v)) {
            return Err(Error::Domain(format!("nature value {v} outside N")));
        }
        if self.breakpoints.iter().any(|&b| !(b > 0.0 && b < horizon)) {
            return Err(Error::InvalidInput("breakpoints must lie inside (0, T)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Nature {
    Elementary(NatureStrategy),
    /// Follow the policy's worst-case volatility field.
    Feedback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub principal_estimate: (f64, f64),
    pub agent_estimate: (f64, f64),
    /// `E[L(X_T)]`.
    pub liquidation_estimate: (f64, f64),
    pub terminal_x: Vec<f64>,
    pub terminal_y: Vec<f64>,
    /// Path average of `(ΔX)²/Δt` per step, and of `σ(t, X, ν)²`.
    pub realized_qv: Vec<f64>,
    pub expected_qv: Vec<f64>,
    /// Path average of `b²`; `E[(ΔX)²/Δt] = σ² + b²Δt` for frozen coefficients.
    pub drift_sq: Vec<f64>,
    pub quarantined: usize,
    pub clamped_lookups: usize,
    pub y_clipped: usize,
    /// Smallest and largest discount factor `𝒦_{0,T}` over paths.
    pub discount_range: (f64, f64),
}

type EffortMap<'a> = &'a (dyn Fn(f64, f64, f64) -> f64 + Sync);
type Observer<'a> = &'a (dyn Fn(f64, f64, f64) -> f64 + Sync);

#[derive(Default, Clone, Copy)]
struct RunOpts<'a> {
    /// `(t, x, α*) ↦ a` replacing the agent's best response.
    effort: Option<EffortMap<'a>>,
    /// Observed at `t = 0` and every `every` steps.
    observe: Option<(Observer<'a>, usize)>,
    /// Skip the contract and pay `L(X_T) − salary` instead.
    salary: Option<f64>,
}

struct PathOut {
    principal: f64,
    agent: f64,
    liquidation: f64,
    x: f64,
    y: f64,
    weight: f64,
    discount: f64,
    ok: bool,
    clamped: usize,
    y_clipped: bool,
}

struct RunOut {
    paths: Vec<PathOut>,
    obs: Vec<Vec<f64>>,
    qv: Vec<f64>,
    qv_exp: Vec<f64>,
    drift_sq: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    model: &ModelSpec,
    ham: &Hamiltonians,
    policy: &ContractPolicy,
    nature: &Nature,
    cfg: &SimConfig,
    steps: usize,
    p: usize,
    opts: &RunOpts,
    qv: &mut [f64],
    qv_exp: &mut [f64],
    drift_sq: &mut [f64],
    obs: &mut Vec<f64>,
) -> PathOut {
    let mut rng = path_rng(cfg.seed, p);
    let dt = cfg.dt;
    let sq = dt.sqrt();
    let (mut x, mut y) = (cfg.x0, policy.y0);
    let (mut logw, mut disc, mut running) = (0.0_f64, 1.0_f64, 0.0_f64);
    let mut clamped = 0;
    let mut ok = true;
    obs.clear();
    if let Some((f, _)) = opts.observe {
        obs.push(f(0.0, x, y));
    }
    for s in 0..steps {
        let t = s as f64 * dt;
        let pol = policy.at(t, x, y);
        clamped += pol.clamped as usize;
        let n = model.nature_set.clamp(match nature {
            Nature::Elementary(ns) => ns.value_at(t + 0.5 * dt),
            Nature::Feedback => pol.n,
        });
        let sig = model.sigma(t, x, n);
        let s2 = sig * sig;
        let (z, gamma) = if opts.salary.is_some() { (0.0, 0.0) } else { (pol.z, pol.gamma) };
        let ctx = ham.point_h(t, x, y);
        let a_star = ham.effort_at_ctx(&ctx, z, n);
        let a = match opts.effort {
            Some(f) => model.effort_set.clamp(f(t, x, a_star)),
            None => a_star,
        };
        let b = model.b(t, x, a, n);
        let h = if opts.salary.is_some() { 0.0 } else { ham.h_value_ctx(&ctx, z, gamma) };
        let dw = sq * normal(&mut rng);
        let dx = if cfg.girsanov_mode {
            let theta = if sig > 0.0 {
                b / sig
            } else if b == 0.0 {
                0.0
            } else {
                ok = false;
                break;
            };
            logw += theta * dw - 0.5 * theta * theta * dt;
            sig * dw
        } else {
            b * dt + sig * dw
        };
        running += disc * model.c(t, x, a) * dt;
        disc *= (-model.k(t, x, a, n) * dt).exp();
        y += (0.5 * s2 * gamma - h) * dt + z * dx;
        x += dx;
        qv[s] = dx * dx / dt;
        qv_exp[s] = s2;
        drift_sq[s] = b * b;
        if let Some((f, every)) = opts.observe {
            if (s + 1) % every == 0 {
                obs.push(f(t + dt, x, y));
            }
        }
        if !(x.is_finite() && y.is_finite() && logw.is_finite()) {
            ok = false;
            break;
        }
    }
    let ua = &model.utility_agent;
    let weight = logw.exp();
    let (principal, agent, y_clipped) = match opts.salary {
        Some(m) => {
            let l = model.liquidate(x);
            let xi = l - m;
            (model.utility_principal.eval(l - xi), f64::NAN, false)
        }
        None => {
            let yc = ua.clip_to_range(y);
            match ua.inverse(yc) {
                Some(xi) => (
                    model.utility_principal.eval(model.liquidate(x) - xi),
                    disc * ua.eval(xi) - running,
                    yc != y,
                ),
                None => {
                    ok = false;
                    (f64::NAN, f64::NAN, yc != y)
                }
            }
        }
    };
    let liquidation = model.liquidate(x);
    ok = ok && weight.is_finite() && principal.is_finite() && liquidation.is_finite();
    PathOut { principal, agent, liquidation, x, y, weight, discount: disc, ok, clamped, y_clipped }
}

fn run(
    model: &ModelSpec,
    ham: &Hamiltonians,
    policy: &ContractPolicy,
    nature: &Nature,
    cfg: &SimConfig,
    opts: RunOpts,
) -> Result<RunOut> {
    let steps = cfg.steps()?;
    if let Nature::Elementary(ns) = nature {
        ns.validate(&model.nature_set, cfg.horizon)?;
    }
    let chunks = cfg.paths.div_ceil(CHUNK);
    let per_chunk: Vec<(Vec<PathOut>, Vec<Vec<f64>>, [Vec<f64>; 3])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(cfg.paths);
            let mut outs = Vec::with_capacity(hi - lo);
            let mut obs_all = Vec::with_capacity(hi - lo);
            let mut sums = [vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]];
            let [mut qv, mut qe, mut bb] = [vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]];
            let mut obs = Vec::new();
            for p in lo..hi {
                let out = simulate_path(model, ham, policy, nature, cfg, steps, p, &opts, &mut qv, &mut qe, &mut bb, &mut obs);
                if out.ok {
                    for s in 0..steps {
                        sums[0][s] += qv[s];
                        sums[1][s] += qe[s];
                        sums[2][s] += bb[s];
                    }
                }
                outs.push(out);
                obs_all.push(obs.clone());
            }
            (outs, obs_all, sums)
        })
        .collect();
    let mut paths = Vec::with_capacity(cfg.paths);
    let mut obs = Vec::with_capacity(cfg.paths);
    let mut totals = [vec![0.0; steps], vec![0.0; steps], vec![0.0; steps]];
    for (outs, o, sums) in per_chunk {
        paths.extend(outs);
        obs.extend(o);
        for (t, s) in totals.iter_mut().zip(&sums) {
            for (a, b) in t.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
    let good = paths.iter().filter(|p| p.ok).count();
    let bad = cfg.paths - good;
    if bad * 100 > cfg.paths || good == 0 {
        return Err(Error::Quarantine { quarantined: bad, paths: cfg.paths });
    }
    for v in totals.iter_mut().flatten() {
        *v /= good as f64;
    }
    let [qv, qv_exp, drift_sq] = totals;
    Ok(RunOut { paths, obs, qv, qv_exp, drift_sq })
}

fn summarize(out: RunOut) -> SimResult {
    let good: Vec<&PathOut> = out.paths.iter().filter(|p| p.ok).collect();
    let pick = |f: &dyn Fn(&PathOut) -> f64| -> Vec<f64> { good.iter().map(|p| f(p)).collect() };
    let principal = pick(&|p| p.principal * p.weight);
    let agent = pick(&|p| p.agent * p.weight);
    let liq = pick(&|p| p.liquidation * p.weight);
    let dmin = good.iter().map(|p| p.discount).fold(f64::INFINITY, f64::min);
    let dmax = good.iter().map(|p| p.discount).fold(f64::NEG_INFINITY, f64::max);
    SimResult {
        principal_estimate: mean_ci(&principal),
        agent_estimate: mean_ci(&agent),
        liquidation_estimate: mean_ci(&liq),
        terminal_x: pick(&|p| p.x),
        terminal_y: pick(&|p| p.y),
        realized_qv: out.qv,
        expected_qv: out.qv_exp,
        drift_sq: out.drift_sq,
        quarantined: out.paths.len() - good.len(),
        clamped_lookups: out.paths.iter().map(|p| p.clamped).sum(),
        y_clipped: good.iter().filter(|p| p.y_clipped).count(),
        discount_range: (dmin, dmax),
    }
}

/// Euler–Maruyama simulation of the output and continuation value under the
/// agent's best response to `policy`.
pub fn simulate_system(
    model: &ModelSpec,
    grid: &GridSpec,
    policy: &ContractPolicy,
    nature: &Nature,
    cfg: &SimConfig,
) -> Result<SimResult> {
    let ham = Hamiltonians::new(model, grid);
    Ok(summarize(run(model, &ham, policy, nature, cfg, RunOpts::default())?))
}

/// Discrete stochastic exponential `exp(Σ θ ΔW − ½ θ² Δt)` of
/// `θ = b/σ` along a driftless path `xs` (length `steps + 1`).
pub fn girsanov_weight(
    model: &ModelSpec,
    xs: &[f64],
    effort_path: &[f64],
    nature_path: &[f64],
    dt: f64,
) -> Result<f64> {
    if xs.len() != effort_path.len() + 1 || effort_path.len() != nature_path.len() {
        return Err(Error::InvalidInput("path lengths do not match".into()));
    }
    let mut logw = 0.0;
    for s in 0..effort_path.len() {
        let t = s as f64 * dt;
        let (x, a, n) = (xs[s], effort_path[s], nature_path[s]);
        let sig = model.sigma(t, x, n);
        let b = model.b(t, x, a, n);
        let theta = if sig > 0.0 {
            b / sig
        } else if b == 0.0 {
            0.0
        } else {
            return Err(Error::Domain(format!("drift {b} with zero volatility at step {s}")));
        };
        let dw = (xs[s + 1] - x) / if sig > 0.0 { sig } else { 1.0 };
        logw += theta * dw - 0.5 * theta * theta * dt;
    }
    let w = f64::exp(logw);
    if !w.is_finite() {
        return Err(Error::NonFinite { path: 0 });
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NatureSearch {
    pub strategy: NatureStrategy,
    pub value: f64,
    pub ci: f64,
    pub sweeps: usize,
    /// A full sweep left every coordinate unchanged.
    pub converged: bool,
}

/// Coordinate descent over piecewise-constant Nature strategies on a
/// uniform partition, each coordinate scanned over the nature grid with
/// common random numbers.
pub fn adversarial_nature_search(
    model: &ModelSpec,
    grid: &GridSpec,
    policy: &ContractPolicy,
    cfg: &SimConfig,
    intervals: usize,
    max_sweeps: usize,
) -> Result<NatureSearch> {
    if intervals == 0 {
        return Err(Error::InvalidInput("intervals must be at least 1".into()));
    }
    let ham = Hamiltonians::new(model, grid);
    let scan: Vec<f64> = ham.n_grid().to_vec();
    let eval = |values: &[f64]| -> Result<(f64, f64)> {
        let nature = Nature::Elementary(NatureStrategy::uniform(values.to_vec(), cfg.horizon));
        Ok(summarize(run(model, &ham, policy, &nature, cfg, RunOpts::default())?).principal_estimate)
    };
    let mut values = vec![scan[scan.len() / 2]; intervals];
    let mut best = eval(&values)?;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps.max(1) {
        sweeps += 1;
        let mut changed = false;
        for i in 0..intervals {
            for &n in &scan {
                if n == values[i] {
                    continue;
                }
                let mut trial = values.clone();
                trial[i] = n;
                let v = eval(&trial)?;
                if v.0 < best.0 - 1e-12 {
                    best = v;
                    values = trial;
                    changed = true;
                }
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(NatureSearch {
        strategy: NatureStrategy::uniform(values, cfg.horizon),
        value: best.0,
        ci: best.1,
        sweeps,
        converged,
    })
}

/// Options of the incentive check.
#[derive(Debug, Clone, PartialEq)]
pub struct IcOptions {
    /// Range of deformation amplitudes `s·A`, drawn uniformly.
    pub amplitude: (f64, f64),
    /// Constant volatilities over which the agent takes the worst case.
    pub vol_candidates: Vec<f64>,
    pub bias_budget: f64,
    /// Added to every effort, perturbed or not; nonzero values model a
    /// suboptimal policy.
    pub baseline_shift: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcEntry {
    pub index: usize,
    pub amplitude: f64,
    pub phase: (f64, f64, f64),
    pub value: f64,
    pub ci: f64,
    /// `value ≤ unperturbed + 3·CI + bias`.
    pub passes: bool,
    /// `value < unperturbed − CI`.
    pub strictly_lower: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcReport {
    pub unperturbed: (f64, f64),
    pub entries: Vec<IcEntry>,
    pub all_pass: bool,
    pub strictly_lower: usize,
}

/// Agent value of `effort` under the worst constant volatility.
fn worst_agent_value(
    model: &ModelSpec,
    ham: &Hamiltonians,
    policy: &ContractPolicy,
    cfg: &SimConfig,
    vols: &[f64],
    effort: EffortMap,
) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, 0.0);
    for &n in vols {
        let nature = Nature::Elementary(NatureStrategy::constant(n));
        let opts = RunOpts { effort: Some(effort), ..Default::default() };
        let r = summarize(run(model, ham, policy, &nature, cfg, opts)?).agent_estimate;
        if r.0 < best.0 {
            best = r;
        }
    }
    Ok(best)
}

/// Deform the agent's best response by
/// `δ(t, x) = A (1 + ½ sin(ωt + ψx + φ))` and compare worst-case values.
pub fn incentive_compatibility_check(
    model: &ModelSpec,
    grid: &GridSpec,
    policy: &ContractPolicy,
    cfg: &SimConfig,
    perturbations: usize,
    opts: &IcOptions,
) -> Result<IcReport> {
    use rand::Rng;
    if opts.vol_candidates.is_empty() {
        return Err(Error::InvalidInput("no volatility candidates".into()));
    }
    let ham = Hamiltonians::new(model, grid);
    let shift = opts.baseline_shift;
    let base = move |_: f64, _: f64, a: f64| a + shift;
    let unperturbed = worst_agent_value(model, &ham, policy, cfg, &opts.vol_candidates, &base)?;
    let mut rng = path_rng(opts.seed, usize::MAX);
    let mut entries = Vec::with_capacity(perturbations);
    for index in 0..perturbations {
        let amplitude = rng.gen_range(opts.amplitude.0..=opts.amplitude.1);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let amp = sign * amplitude;
        let phase = (rng.gen_range(0.0..6.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..std::f64::consts::TAU));
        let deform = move |t: f64, x: f64, a: f64| a + shift + amp * (1.0 + 0.5 * (phase.0 * t + phase.1 * x + phase.2).sin());
        let (value, ci) = worst_agent_value(model, &ham, policy, cfg, &opts.vol_candidates, &deform)?;
        entries.push(IcEntry {
            index,
            amplitude: amp,
            phase,
            value,
            ci,
            passes: value <= unperturbed.0 + 3.0 * unperturbed.1.max(ci) + opts.bias_budget,
            strictly_lower: value < unperturbed.0 - unperturbed.1.max(ci),
        });
    }
    let all_pass = entries.iter().all(|e| e.passes);
    let strictly_lower = entries.iter().filter(|e| e.strictly_lower).count();
    Ok(IcReport { unperturbed, entries, all_pass, strictly_lower })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub cis: Vec<f64>,
    /// Largest `|ΔE[u]| / Δt` between consecutive checkpoints.
    pub worst_drift: f64,
    /// Consecutive increments are ≥ −3·CI.
    pub nondecreasing: bool,
    pub label: String,
}

/// `E[u(t, X_t, Y_t)]` at `checkpoints + 1` equally spaced times.
pub fn martingale_sandwich_check(
    model: &ModelSpec,
    grid: &GridSpec,
    solution: &PrincipalSolution,
    policy: &ContractPolicy,
    nature: &Nature,
    cfg: &SimConfig,
    checkpoints: usize,
    drift_tol: f64,
) -> Result<MartingaleReport> {
    let steps = cfg.steps()?;
    if steps == 0 {
        let v = solution.u_at(0.0, cfg.x0, policy.y0);
        return Ok(MartingaleReport {
            times: vec![0.0],
            means: vec![v],
            cis: vec![0.0],
            worst_drift: 0.0,
            nondecreasing: true,
            label: "martingale".into(),
        });
    }
    let every = (steps / checkpoints.max(1)).max(1);
    let ham = Hamiltonians::new(model, grid);
    let f = |t: f64, x: f64, y: f64| solution.u_at(t, x, y);
    let opts = RunOpts { observe: Some((&f, every)), ..Default::default() };
    let out = run(model, &ham, policy, nature, cfg, opts)?;
    let good: Vec<usize> = (0..out.paths.len()).filter(|&i| out.paths[i].ok).collect();
    let c = out.obs[good[0]].len();
    let col = |k: usize| -> Vec<f64> { good.iter().map(|&i| out.obs[i][k]).collect() };
    let mut means = Vec::with_capacity(c);
    let mut cis = Vec::with_capacity(c);
    let mut worst: f64 = 0.0;
    let mut nondecreasing = true;
    let dt_obs = every as f64 * cfg.dt;
    for k in 0..c {
        let (m, ci) = mean_ci(&col(k));
        means.push(m);
        cis.push(ci);
        if k > 0 {
            let diffs: Vec<f64> = good.iter().map(|&i| out.obs[i][k] - out.obs[i][k - 1]).collect();
            let (dm, dci) = mean_ci(&diffs);
            worst = worst.max(dm.abs() / dt_obs);
            if dm < -3.0 * dci - 1e-12 {
                nondecreasing = false;
            }
        }
    }
    let times = (0..c).map(|k| k as f64 * dt_obs).collect();
    let label = match nature {
        Nature::Elementary(_) if worst <= drift_tol => "flat game",
        Nature::Elementary(_) if nondecreasing => "submartingale",
        _ if worst <= drift_tol => "martingale",
        _ => "drifting",
    }
    .to_string();
    Ok(MartingaleReport { times, means, cis, worst_drift: worst, nondecreasing, label })
}

/// Estimate of `E[U_P(L(X_T) − ξ^M)]` for the salary contract
/// `ξ^M = L(X_T) − M`, simulated under the principal's constant volatility.
pub fn disjoint_beliefs_demo(
    model: &ModelSpec,
    grid: &GridSpec,
    agent_beliefs: Interval,
    principal_beliefs: Interval,
    m_salary: f64,
    cfg: &SimConfig,
) -> Result<((f64, f64), f64)> {
    if agent_beliefs.overlaps(&principal_beliefs) {
        return Err(Error::OverlappingBeliefs {
            agent_lo: agent_beliefs.lo,
            agent_hi: agent_beliefs.hi,
            principal_lo: principal_beliefs.lo,
            principal_hi: principal_beliefs.hi,
        });
    }
    if !(m_salary >= 0.0) {
        return Err(Error::InvalidInput("salary must be nonnegative".into()));
    }
    let principal_model = model.clone().with_nature_set(principal_beliefs);
    let ham = Hamiltonians::new(&principal_model, grid);
    let policy = ContractPolicy::constant(0.0, 0.0, 0.0, principal_beliefs.lo, 0.0);
    let nature = Nature::Elementary(NatureStrategy::constant(principal_beliefs.lo));
    let opts = RunOpts { salary: Some(m_salary), ..Default::default() };
    let out = summarize(run(&principal_model, &ham, &policy, &nature, cfg, opts)?);
    Ok((out.principal_estimate, model.utility_principal.eval(m_salary)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, Utility};

    fn cfg(paths: usize, dt: f64) -> SimConfig {
        SimConfig { paths, dt, horizon: 1.0, seed: 11, x0: 0.0, girsanov_mode: false }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 0.1).steps().is_err());
        assert!(cfg(1, 0.3).steps().is_err());
        assert_eq!(cfg(1, 0.25).steps().unwrap(), 4);
    }

    #[test]
    fn nature_strategy_intervals() {
        let s = NatureStrategy::uniform(vec![1.0, 2.0, 3.0], 3.0);
        assert_eq!(s.breakpoints, vec![1.0, 2.0]);
        assert_eq!(s.value_at(0.5), 1.0);
        assert_eq!(s.value_at(1.0), 1.0);
        assert_eq!(s.value_at(1.5), 2.0);
        assert_eq!(s.value_at(2.9), 3.0);
        assert!(NatureStrategy::new(vec![0.5], vec![1.0]).is_err());
    }

    #[test]
    fn deterministic_without_diffusion() {
        let m = ModelSpec::new("d", Interval::new(0.0, 1.0).unwrap(), Interval::new(0.0, 0.0).unwrap())
            .with_drift(|_, _, a, _| a)
            .with_cost(|_, _, a| 0.5 * a * a)
            .with_effort_rule(true, |_, _, _, z, _| z.clamp(0.0, 1.0));
        let grid = GridSpec::principal(1.0, 4, 11, 11, 3.0, 5.0);
        let pol = ContractPolicy::constant(0.0, 1.0, 0.0, 0.0, 0.0);
        let r = simulate_system(&m, &grid, &pol, &Nature::Feedback, &cfg(50, 0.125)).unwrap();
        assert_eq!(r.principal_estimate.1, 0.0);
        // X_T = T, Y_T = T - T/2, so X_T - Y_T = 1/2.
        assert!((r.principal_estimate.0 - 0.5).abs() < 1e-12);
        assert!((r.agent_estimate.0 - 0.0).abs() < 1e-12);
    }

    #[test]
    fn zero_sensitivity_keeps_y_on_ode() {
        let m = ModelSpec::new("g", Interval::new(0.0, 1.0).unwrap(), Interval::new(0.4, 0.4).unwrap())
            .with_effort_rule(true, |_, _, _, _, _| 0.0);
        let grid = GridSpec::principal(1.0, 4, 11, 11, 3.0, 5.0);
        let pol = ContractPolicy::constant(0.3, 0.0, 0.0, 0.4, 0.0);
        let r = simulate_system(&m, &grid, &pol, &Nature::Feedback, &cfg(4000, 0.05)).unwrap();
        assert!(r.terminal_y.iter().all(|&y| y == 0.3));
        let (mean, ci) = r.principal_estimate;
        assert!((mean + 0.3).abs() <= 3.0 * ci);
        let var = r.terminal_x.iter().map(|x| x * x).sum::<f64>() / r.terminal_x.len() as f64;
        assert!((var - 0.16).abs() < 0.02);
        for (q, e) in r.realized_qv.iter().zip(&r.expected_qv) {
            assert!((q - e).abs() < 0.03, "{q} {e}");
        }
    }

    #[test]
    fn seed_determinism() {
        let m = presets::risk_neutral(1.0, Interval::new(0.5, 1.0).unwrap(), 3.0);
        let grid = GridSpec::principal(1.0, 4, 11, 11, 3.0, 5.0);
        let pol = ContractPolicy::constant(0.1, 1.0, 0.0, 0.7, 0.0);
        let c = cfg(600, 0.05);
        let a = simulate_system(&m, &grid, &pol, &Nature::Feedback, &c).unwrap();
        let b = simulate_system(&m, &grid, &pol, &Nature::Feedback, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn girsanov_weight_closed_forms() {
        let m = ModelSpec::new("w", Interval::new(0.0, 1.0).unwrap(), Interval::new(0.5, 0.5).unwrap());
        assert_eq!(girsanov_weight(&m, &[0.0, 0.3, 0.1], &[0.2, 0.2], &[0.5, 0.5], 0.1).unwrap(), 1.0);
        let drifted = m.clone().with_drift(|_, _, a, _| a);
        let w = girsanov_weight(&drifted, &[0.0, 0.25], &[0.2], &[0.5], 0.1).unwrap();
        let theta: f64 = 0.2 / 0.5;
        let dw = 0.25 / 0.5;
        assert!((w - (theta * dw - 0.5 * theta * theta * 0.1).exp()).abs() < 1e-15);
    }

    #[test]
    fn girsanov_matches_direct_simulation() {
        let m = presets::risk_neutral(1.0, Interval::new(0.8, 1.2).unwrap(), 3.0);
        let grid = GridSpec::principal(1.0, 4, 11, 11, 3.0, 5.0);
        let pol = ContractPolicy::constant(0.0, 0.4, 0.0, 1.0, 0.0);
        let mut c = cfg(20000, 0.05);
        let direct = simulate_system(&m, &grid, &pol, &Nature::Feedback, &c).unwrap().liquidation_estimate;
        c.girsanov_mode = true;
        c.seed = 99;
        let weighted = simulate_system(&m, &grid, &pol, &Nature::Feedback, &c).unwrap().liquidation_estimate;
        let tol = 3.0 * (direct.1 * direct.1 + weighted.1 * weighted.1).sqrt();
        assert!((direct.0 - weighted.0).abs() <= tol, "{direct:?} {weighted:?}");
        assert!((direct.0 - 0.4).abs() <= 3.0 * direct.1);
    }

    #[test]
    fn disjoint_demo_is_exact() {
        let m = presets::risk_neutral(1.0, Interval::new(0.2, 0.3).unwrap(), 3.0)
            .with_utilities(Utility::linear(), Utility::cara(1.0));
        let grid = GridSpec::principal(1.0, 4, 11, 11, 3.0, 5.0);
        let c = cfg(100, 0.05);
        for &ms in &[0.0, 1.0, 10.0, 100.0] {
            let ((est, ci), target) =
                disjoint_beliefs_demo(&m, &grid, Interval::new(0.2, 0.3).unwrap(), Interval::new(0.5, 0.6).unwrap(), ms, &c)
                    .unwrap();
            assert!((est - target).abs() <= 1e-12 * (1.0 + target.abs()), "{ms}: {est} vs {target}");
            assert!(ci <= 1e-12);
        }
        let overlap = disjoint_beliefs_demo(&m, &grid, Interval::new(0.2, 0.5).unwrap(), Interval::new(0.4, 0.6).unwrap(), 1.0, &c);
        assert!(matches!(overlap, Err(Error::OverlappingBeliefs { .. })));
    }

    #[test]
    fn nature_search_picks_low_vol_for_convex_payoff() {
        let m = ModelSpec::new("s", Interval::new(0.0, 1.0).unwrap(), Interval::new(0.2, 0.6).unwrap())
            .with_liquidation(|x| x * x)
            .with_effort_rule(true, |_, _, _, _, _| 0.0);
        let grid = GridSpec::principal(1.0, 4, 11, 11, 3.0, 5.0).with_controls(3, 3, 3, 3);
        let pol = ContractPolicy::constant(0.0, 0.0, 0.0, 0.4, 0.0);
        let c = cfg(2000, 0.05);
        let found = adversarial_nature_search(&m, &grid, &pol, &c, 2, 5).unwrap();
        assert_eq!(found.strategy.values, vec![0.2, 0.2]);
        assert!(found.converged);
        // Brute force over the extreme strategies.
        let ham = Hamiltonians::new(&m, &grid);
        let mut best = f64::INFINITY;
        for v in [[0.2, 0.2], [0.2, 0.6], [0.6, 0.2], [0.6, 0.6]] {
            let nature = Nature::Elementary(NatureStrategy::uniform(v.to_vec(), 1.0));
            let r = summarize(run(&m, &ham, &pol, &nature, &c, RunOpts::default()).unwrap());
            best = best.min(r.principal_estimate.0);
        }
        assert_eq!(best, found.value);
    }
}
