//! The five pipelines behind the subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use robust_contract::agent::{participation_check, solve_agent};
use robust_contract::principal::{extract_contract, optimize_y0, solve_hjbi, ContractPolicy, PrincipalSolution};
use robust_contract::sim::{
    disjoint_beliefs_demo, incentive_compatibility_check, martingale_sandwich_check, simulate_system, IcOptions,
    SimResult,
};
use robust_contract::{Interval, ModelSpec, Utility};

use crate::config::{parse_contract, parse_utility, RunConfig, SweepSection};
use crate::error::CliError;
use crate::export::{self, agent_rows, principal_rows, read_table, sha256_hex, AGENT_HEADER, PRINCIPAL_HEADER};
use crate::manifest::{ArtifactDir, Manifest};

pub const AGENT_SURFACE: &str = "agent_surface.txt";
pub const AGENT_SUMMARY: &str = "agent_summary.txt";
pub const PRINCIPAL_SURFACE: &str = "principal_surface.txt";
pub const PRINCIPAL_SUMMARY: &str = "principal_summary.txt";
pub const SIM_TERMINAL: &str = "sim_terminal.txt";
pub const SIM_SERIES: &str = "sim_series.txt";
pub const SIM_SUMMARY: &str = "sim_summary.txt";
pub const SWEEP_SUMMARY: &str = "sweep_summary.txt";
pub const VERIFY_REPORT: &str = "verify_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveAgent,
    SolvePrincipal,
    Simulate,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::SolveAgent => "solve-agent",
            Self::SolvePrincipal => "solve-principal",
            Self::Simulate => "simulate",
            Self::Verify => "verify",
            Self::Sweep => "sweep",
        }
    }
}

/// A parsed configuration with its resolved locations.
pub struct Run {
    pub config: RunConfig,
    /// Directory relative paths in the config are resolved against.
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Run {
    fn seed(&self) -> Option<u64> {
        self.config.sim.as_ref().map(|s| s.seed)
    }

    fn finish(&self, dir: ArtifactDir, cmd: Command) -> Result<(), CliError> {
        dir.finish(cmd.name(), &self.config.to_toml(), self.seed(), &self.config.grid)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub fn execute(cmd: Command, run: &Run) -> Result<(), CliError> {
    match cmd {
        Command::SolveAgent => cmd_solve_agent(run),
        Command::SolvePrincipal => cmd_solve_principal(run).map(|_| ()),
        Command::Simulate => cmd_simulate(run),
        Command::Verify => cmd_verify(run),
        Command::Sweep => cmd_sweep(run),
    }
}

fn model_and_grid(cfg: &RunConfig) -> Result<(ModelSpec, robust_contract::GridSpec), CliError> {
    let model = cfg.model.build()?;
    let grid = cfg.grid.build(cfg.model.truncation())?;
    Ok((model, grid))
}

fn write_agent(dir: &mut ArtifactDir, cfg: &RunConfig, model: &ModelSpec, base: &Path, contract: &str, x0: f64, r0: f64) -> Result<f64, CliError> {
    let (_, grid) = model_and_grid(cfg)?;
    let contract = parse_contract(contract, base)?;
    let sol = dir.timed("solve_agent", || solve_agent(model, &grid, &contract))?;
    dir.table(AGENT_SURFACE, &AGENT_HEADER, &agent_rows(&sol))?;
    let v0 = sol.value_at(0.0, x0);
    let sup = sol.value.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    dir.table(
        AGENT_SUMMARY,
        &["x0", "value", "participation", "envelope", "sup_abs_value"],
        &[vec![x0, v0, participation_check(&sol, x0, r0) as u8 as f64, sol.envelope, sup]],
    )?;
    Ok(v0)
}

pub fn cmd_solve_agent(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let agent = cfg.agent()?;
    let model = cfg.model.build()?;
    let mut dir = ArtifactDir::create(&run.out)?;
    write_agent(&mut dir, cfg, &model, &run.base, &agent.contract, agent.x0, agent.reservation)?;
    run.finish(dir, Command::SolveAgent)
}

struct PrincipalRun {
    model: ModelSpec,
    grid: robust_contract::GridSpec,
    policy: ContractPolicy,
    x0: f64,
}

fn solve_principal_into(dir: &mut ArtifactDir, cfg: &RunConfig) -> Result<PrincipalRun, CliError> {
    let p = cfg.principal()?;
    let (model, grid) = model_and_grid(cfg)?;
    let sol = dir.timed("solve_hjbi", || solve_hjbi(&model, &grid))?;
    let choice = optimize_y0(&sol, p.x0, p.reservation)?;
    dir.table(PRINCIPAL_SURFACE, &PRINCIPAL_HEADER, &principal_rows(&sol))?;
    let solution = Arc::new(sol);
    let policy = extract_contract(solution.clone(), choice.y0)?;
    dir.table(
        PRINCIPAL_SUMMARY,
        &["x0", "reservation", "y0_star", "value", "smallest_feasible", "y0_on_edge", "radius_fallbacks"],
        &[vec![
            p.x0,
            p.reservation,
            choice.y0,
            choice.value,
            choice.smallest_feasible as u8 as f64,
            policy.y0_on_edge as u8 as f64,
            solution.radius_fallbacks as f64,
        ]],
    )?;
    Ok(PrincipalRun { model, grid, policy, x0: p.x0 })
}

fn cmd_solve_principal(run: &Run) -> Result<(), CliError> {
    let mut dir = ArtifactDir::create(&run.out)?;
    solve_principal_into(&mut dir, &run.config)?;
    run.finish(dir, Command::SolvePrincipal)
}

fn sim_summary_row(r: &SimResult) -> Vec<f64> {
    vec![
        r.principal_estimate.0,
        r.principal_estimate.1,
        r.agent_estimate.0,
        r.agent_estimate.1,
        r.liquidation_estimate.0,
        r.liquidation_estimate.1,
        r.quarantined as f64,
        r.clamped_lookups as f64,
        r.y_clipped as f64,
        r.discount_range.0,
        r.discount_range.1,
    ]
}

const SIM_SUMMARY_HEADER: [&str; 11] = [
    "principal",
    "principal_ci",
    "agent",
    "agent_ci",
    "liquidation",
    "liquidation_ci",
    "quarantined",
    "clamped_lookups",
    "y_clipped",
    "discount_min",
    "discount_max",
];

fn cmd_simulate(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let sim = cfg.sim()?;
    let mut dir = ArtifactDir::create(&run.out)?;
    let pr = solve_principal_into(&mut dir, cfg)?;
    let (sc, nature) = sim.build(cfg.grid.horizon, pr.x0)?;
    let res = dir.timed("simulate", || simulate_system(&pr.model, &pr.grid, &pr.policy, &nature, &sc))?;
    let terminal: Vec<Vec<f64>> = res.terminal_x.iter().zip(&res.terminal_y).map(|(x, y)| vec![*x, *y]).collect();
    dir.table(SIM_TERMINAL, &["x_T", "y_T"], &terminal)?;
    let series: Vec<Vec<f64>> = res
        .realized_qv
        .iter()
        .zip(&res.expected_qv)
        .zip(&res.drift_sq)
        .enumerate()
        .map(|(s, ((q, e), b))| vec![s as f64 * sc.dt, *q, *e, *b])
        .collect();
    dir.table(SIM_SERIES, &["t", "realized_qv", "expected_qv", "drift_sq"], &series)?;
    dir.table(SIM_SUMMARY, &SIM_SUMMARY_HEADER, &[sim_summary_row(&res)])?;
    run.finish(dir, Command::Simulate)
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    measured: Value,
}

/// Loads a `solve-principal` directory after checking every recorded
/// checksum. Returns the failed checksums instead of a run when any differ.
fn load_artifacts(dir: &Path) -> Result<Result<(Manifest, PrincipalSolution, f64), Vec<String>>, CliError> {
    let manifest = Manifest::read(dir)?;
    let mut bad = Vec::new();
    for (name, want) in &manifest.artifacts {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
        if &sha256_hex(&bytes) != want {
            bad.push(name.clone());
        }
    }
    for name in [PRINCIPAL_SURFACE, PRINCIPAL_SUMMARY] {
        if !manifest.artifacts.contains_key(name) {
            return Err(CliError::MissingArtifact(format!("{} has no {name}", dir.display())));
        }
    }
    if !bad.is_empty() {
        return Ok(Err(bad));
    }
    let (sh, srows) = read_table(&dir.join(PRINCIPAL_SUMMARY))?;
    let col = |n: &str| sh.iter().position(|h| h == n).map(|i| srows[0][i]);
    let (Some(y0), Some(fallbacks)) = (col("y0_star"), col("radius_fallbacks")) else {
        return Err(CliError::Verification(format!("{PRINCIPAL_SUMMARY} lacks y0_star")));
    };
    let (h, rows) = read_table(&dir.join(PRINCIPAL_SURFACE))?;
    let sol = export::principal_from_rows(&h, &rows, fallbacks as usize).map_err(CliError::Verification)?;
    Ok(Ok((manifest, sol, y0)))
}

fn cmd_verify(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let v = cfg.verify()?;
    let sim = cfg.sim()?;
    let art = run.resolve(&v.artifacts);
    let mut dir = ArtifactDir::create(&run.out)?;
    let mut checks = Vec::new();
    let loaded = dir.timed("load", || load_artifacts(&art))?;
    let (manifest, sol, y0) = match loaded {
        Ok(x) => x,
        Err(bad) => {
            checks.push(Check { name: "artifact_checksums", pass: false, measured: json!({ "mismatched": bad }) });
            return report(run, dir, checks);
        }
    };
    checks.push(Check { name: "artifact_checksums", pass: true, measured: json!({ "files": manifest.artifacts.len() }) });
    let solved = RunConfig::parse(&manifest.config)?;
    let (model, grid) = model_and_grid(&solved)?;
    let x0 = solved.principal()?.x0;
    let solution = Arc::new(sol);
    let policy = extract_contract(solution.clone(), y0)?;
    let (sc, nature) = sim.build(solved.grid.horizon, x0)?;

    let first = dir.timed("closure", || simulate_system(&model, &grid, &policy, &nature, &sc))?;
    let u0 = solution.u0_at(x0, y0);
    let (am, aci) = first.agent_estimate;
    let (pm, pci) = first.principal_estimate;
    checks.push(Check {
        name: "loop_closure",
        pass: (am - y0).abs() <= 3.0 * aci + v.closure_tol && (pm - u0).abs() <= 3.0 * pci + v.closure_tol,
        measured: json!({ "agent": am, "agent_ci": aci, "y0": y0, "principal": pm, "principal_ci": pci, "u0": u0 }),
    });

    let again = dir.timed("determinism", || simulate_system(&model, &grid, &policy, &nature, &sc))?;
    checks.push(Check { name: "seed_determinism", pass: again == first, measured: json!({ "paths": sc.paths }) });

    let kappa = model.growth.kappa;
    let horizon = solved.grid.horizon;
    let (dmin, dmax) = first.discount_range;
    let slack = 1e-12;
    checks.push(Check {
        name: "discount_bounds",
        pass: dmin >= (-kappa * horizon).exp() - slack && dmax <= (kappa * horizon).exp() + slack,
        measured: json!({ "min": dmin, "max": dmax, "kappa": kappa }),
    });

    let steps = first.realized_qv.len().max(1) as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / steps;
    let (rq, eq) = (mean(&first.realized_qv), mean(&first.expected_qv) + sc.dt * mean(&first.drift_sq));
    let qv_tol = 4.0 * (2.0 / (sc.paths as f64 * steps)).sqrt() * eq + 0.01 * eq + 1e-12;
    checks.push(Check {
        name: "quadratic_variation",
        pass: (rq - eq).abs() <= qv_tol,
        measured: json!({ "realized": rq, "expected": eq, "tolerance": qv_tol }),
    });

    let mut weighted_cfg = sc;
    weighted_cfg.girsanov_mode = true;
    weighted_cfg.seed = sc.seed.wrapping_add(1);
    let weighted = dir.timed("girsanov", || simulate_system(&model, &grid, &policy, &nature, &weighted_cfg))?;
    let (d, dci) = first.liquidation_estimate;
    let (w, wci) = weighted.liquidation_estimate;
    checks.push(Check {
        name: "girsanov",
        pass: (d - w).abs() <= 3.0 * (dci * dci + wci * wci).sqrt(),
        measured: json!({ "direct": d, "direct_ci": dci, "weighted": w, "weighted_ci": wci }),
    });

    let martingale = dir.timed("martingale", || {
        martingale_sandwich_check(&model, &grid, &solution, &policy, &nature, &sc, v.checkpoints, v.martingale_tol)
    })?;
    checks.push(Check {
        name: "martingale",
        pass: martingale.worst_drift <= v.martingale_tol,
        measured: json!({ "worst_drift": martingale.worst_drift, "label": martingale.label, "means": martingale.means }),
    });

    let opts = IcOptions {
        amplitude: (v.ic_amplitude[0], v.ic_amplitude[1]),
        vol_candidates: v.ic_vols.clone(),
        bias_budget: v.bias_budget,
        baseline_shift: v.baseline_shift,
        seed: sc.seed.wrapping_add(2),
    };
    let ic = dir.timed("incentive", || incentive_compatibility_check(&model, &grid, &policy, &sc, v.perturbations, &opts))?;
    let flagged: Vec<usize> = ic.entries.iter().filter(|e| !e.passes).map(|e| e.index).collect();
    checks.push(Check {
        name: "incentive_compatibility",
        pass: ic.all_pass,
        measured: json!({
            "unperturbed": ic.unperturbed.0,
            "unperturbed_ci": ic.unperturbed.1,
            "strictly_lower": ic.strictly_lower,
            "flagged": flagged,
            "values": ic.entries.iter().map(|e| e.value).collect::<Vec<_>>(),
        }),
    });
    report(run, dir, checks)
}

fn report(run: &Run, mut dir: ArtifactDir, checks: Vec<Check>) -> Result<(), CliError> {
    let all = checks.iter().all(|c| c.pass);
    let text = serde_json::to_string_pretty(&json!({ "all_pass": all, "checks": checks })).expect("report serialises");
    dir.text(VERIFY_REPORT, &(text + "\n"))?;
    run.finish(dir, Command::Verify)?;
    if all {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

fn cmd_sweep(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let sweep = cfg.sweep()?;
    let mut dir = ArtifactDir::create(&run.out)?;
    match sweep {
        SweepSection::MSalary(s) => {
            let sim = cfg.sim()?;
            let up = parse_utility("sweep.utility_principal", &s.utility_principal)?;
            let (model, grid) = model_and_grid(cfg)?;
            let model = model.with_utilities(Utility::linear(), up);
            let agent = Interval::new(s.agent_beliefs[0], s.agent_beliefs[1])?;
            let principal = Interval::new(s.principal_beliefs[0], s.principal_beliefs[1])?;
            let (sc, _) = sim.build(cfg.grid.horizon, 0.0)?;
            let mut rows = Vec::new();
            for (i, &m) in s.values.iter().enumerate() {
                let ((est, ci), target) = dir.timed("demo", || disjoint_beliefs_demo(&model, &grid, agent, principal, m, &sc))?;
                let row = vec![m, est, ci, target];
                let mut point = ArtifactDir::create(&run.out.join(format!("point_{i:03}")))?;
                point.table("demo.txt", &["m_salary", "estimate", "ci", "target"], &[row.clone()])?;
                run.finish(point, Command::Sweep)?;
                rows.push(row);
            }
            dir.table(SWEEP_SUMMARY, &["m_salary", "estimate", "ci", "target"], &rows)?;
        }
        SweepSection::NatureHi(s) => {
            let mut rows = Vec::new();
            for (i, &hi) in s.values.iter().enumerate() {
                let mut point_cfg = cfg.clone();
                point_cfg.model = cfg.model.with_nature_hi(hi)?;
                let model = point_cfg.model.build()?;
                let mut point = ArtifactDir::create(&run.out.join(format!("point_{i:03}")))?;
                let v0 = write_agent(&mut point, &point_cfg, &model, &run.base, &s.contract, s.x0, f64::NEG_INFINITY)?;
                point.finish(Command::Sweep.name(), &point_cfg.to_toml(), run.seed(), &point_cfg.grid)?;
                rows.push(vec![hi, v0]);
            }
            dir.table(SWEEP_SUMMARY, &["nature_hi", "value"], &rows)?;
        }
    }
    run.finish(dir, Command::Sweep)
}
