//! Run configuration: one TOML file per run, parsed strictly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use robust_contract::agent::ContractFunction;
use robust_contract::model::presets::{self, Table, TabulatedParams};
use robust_contract::sim::{Nature, NatureStrategy, SimConfig};
use robust_contract::{GridSpec, Interval, ModelSpec, Utility};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal: Option<PrincipalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ModelConfig {
    RiskNeutral(RiskNeutralParams),
    QuadraticBounded(QuadraticParams),
    Martingale(MartingaleParams),
    Tabulated(TabulatedConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskNeutralParams {
    pub effort_max: f64,
    pub nature: [f64; 2],
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub effort_max: f64,
    pub nature: [f64; 2],
    pub truncation: f64,
    pub utility_bound: f64,
    pub risk_aversion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleParams {
    pub nature: [f64; 2],
    pub discount: f64,
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedConfig {
    /// `[a, b]` rows.
    pub drift: Vec<[f64; 2]>,
    /// `[n, σ]` rows.
    pub vol: Vec<[f64; 2]>,
    /// `[a, c]` rows.
    pub cost: Vec<[f64; 2]>,
    pub discount: f64,
    pub utility_agent: String,
    pub utility_principal: String,
    pub liquidation_slope: f64,
    pub truncation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub t_steps: usize,
    pub x_nodes: usize,
    pub y_nodes: usize,
    pub y_bound: f64,
    pub a_nodes: usize,
    pub n_nodes: usize,
    pub z_nodes: usize,
    pub gamma_nodes: usize,
    pub cfl_safety: f64,
    pub radius_cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// `linear:slope,intercept`, `call:strike` or `tabulated:path`.
    pub contract: String,
    pub x0: f64,
    pub reservation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalSection {
    pub x0: f64,
    pub reservation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NatureConfig {
    /// Only `"feedback"` is accepted.
    Named(String),
    Elementary { breakpoints: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub girsanov_mode: bool,
    pub nature: NatureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Output directory of a prior `solve-principal` run.
    pub artifacts: PathBuf,
    pub perturbations: usize,
    pub ic_amplitude: [f64; 2],
    pub ic_vols: Vec<f64>,
    pub baseline_shift: f64,
    pub bias_budget: f64,
    pub closure_tol: f64,
    pub martingale_tol: f64,
    pub checkpoints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepSection {
    MSalary(SalarySweep),
    NatureHi(NatureSweep),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalarySweep {
    pub values: Vec<f64>,
    pub agent_beliefs: [f64; 2],
    pub principal_beliefs: [f64; 2],
    pub utility_principal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NatureSweep {
    pub values: Vec<f64>,
    pub contract: String,
    pub x0: f64,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn interval(key: &str, v: [f64; 2]) -> Result<Interval, CliError> {
    Interval::new(v[0], v[1]).map_err(|e| config_err(format!("{key}: {e}")))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{key} must be positive and finite, got {v}")))
    }
}

/// `linear`, `cara:ρ` or `saturating:bound`.
pub fn parse_utility(key: &str, spec: &str) -> Result<Utility, CliError> {
    let bad = || config_err(format!("{key}: unrecognised utility `{spec}`"));
    match spec.split_once(':') {
        None if spec == "linear" => Ok(Utility::linear()),
        Some(("cara", r)) => {
            let r: f64 = r.trim().parse().map_err(|_| bad())?;
            positive(key, r)?;
            Ok(Utility::cara(r))
        }
        Some(("saturating", b)) => {
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            positive(key, b)?;
            Ok(Utility::saturating(b))
        }
        _ => Err(bad()),
    }
}

fn table(key: &str, rows: &[[f64; 2]]) -> Result<Table, CliError> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    Table::new(&pts).map_err(|e| config_err(format!("{key}: {e}")))
}

/// Contract spec relative to `base` for tabulated files.
pub fn parse_contract(spec: &str, base: &Path) -> Result<ContractFunction, CliError> {
    if let Some(file) = spec.strip_prefix("tabulated:") {
        let path = base.join(file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| config_err(format!("agent.contract: cannot read {}: {e}", path.display())))?;
        let mut pts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| config_err(format!("{}:{}: expected two numbers", path.display(), i + 1)))?;
            if cols.len() != 2 {
                return Err(config_err(format!("{}:{}: expected two numbers", path.display(), i + 1)));
            }
            pts.push((cols[0], cols[1]));
        }
        let t = Table::new(&pts).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        return Ok(ContractFunction::tabulated(spec, t));
    }
    ContractFunction::parse(spec).map_err(|e| config_err(format!("agent.contract: {e}")))
}

impl ModelConfig {
    pub fn truncation(&self) -> f64 {
        match self {
            Self::RiskNeutral(p) => p.truncation,
            Self::QuadraticBounded(p) => p.truncation,
            Self::Martingale(p) => p.truncation,
            Self::Tabulated(p) => p.truncation,
        }
    }

    pub fn build(&self) -> Result<ModelSpec, CliError> {
        positive("model.truncation", self.truncation())?;
        match self {
            Self::RiskNeutral(p) => {
                positive("model.effort_max", p.effort_max)?;
                let n = interval("model.nature", p.nature)?;
                Ok(presets::risk_neutral(p.effort_max, n, p.truncation))
            }
            Self::QuadraticBounded(p) => {
                positive("model.effort_max", p.effort_max)?;
                positive("model.utility_bound", p.utility_bound)?;
                positive("model.risk_aversion", p.risk_aversion)?;
                let n = interval("model.nature", p.nature)?;
                Ok(presets::quadratic_bounded(p.effort_max, n, p.truncation, p.utility_bound, p.risk_aversion))
            }
            Self::Martingale(p) => {
                if !p.discount.is_finite() {
                    return Err(config_err("model.discount must be finite"));
                }
                let n = interval("model.nature", p.nature)?;
                Ok(presets::martingale(n, p.discount, p.truncation))
            }
            Self::Tabulated(p) => {
                if !p.discount.is_finite() || !p.liquidation_slope.is_finite() {
                    return Err(config_err("model.discount and model.liquidation_slope must be finite"));
                }
                Ok(presets::custom_tabulated(TabulatedParams {
                    drift: table("model.drift", &p.drift)?,
                    vol: table("model.vol", &p.vol)?,
                    cost: table("model.cost", &p.cost)?,
                    discount: p.discount,
                    utility_agent: parse_utility("model.utility_agent", &p.utility_agent)?,
                    utility_principal: parse_utility("model.utility_principal", &p.utility_principal)?,
                    liquidation_slope: p.liquidation_slope,
                    truncation: p.truncation,
                }))
            }
        }
    }

    /// Copy with the upper end of the volatility band replaced.
    pub fn with_nature_hi(&self, hi: f64) -> Result<Self, CliError> {
        let mut m = self.clone();
        match &mut m {
            Self::RiskNeutral(p) => p.nature[1] = hi,
            Self::QuadraticBounded(p) => p.nature[1] = hi,
            Self::Martingale(p) => p.nature[1] = hi,
            Self::Tabulated(_) => return Err(config_err("sweep.axis = \"nature_hi\" needs a preset with a nature band")),
        }
        Ok(m)
    }
}

impl GridConfig {
    pub fn build(&self, truncation: f64) -> Result<GridSpec, CliError> {
        let mut g = GridSpec::principal(self.horizon, self.t_steps, self.x_nodes, self.y_nodes, truncation, self.y_bound)
            .with_controls(self.a_nodes, self.n_nodes, self.z_nodes, self.gamma_nodes);
        g.cfl_safety = self.cfl_safety;
        g.radius_cap = self.radius_cap;
        g.level_tol = self.level_tol;
        g.validate().map_err(|e| config_err(format!("grid: {e}")))?;
        Ok(g)
    }
}

impl SimSection {
    pub fn build(&self, horizon: f64, x0: f64) -> Result<(SimConfig, Nature), CliError> {
        let cfg = SimConfig { paths: self.paths, dt: self.dt, horizon, seed: self.seed, x0, girsanov_mode: self.girsanov_mode };
        cfg.steps().map_err(|e| config_err(format!("sim: {e}")))?;
        let nature = match &self.nature {
            NatureConfig::Named(s) if s == "feedback" => Nature::Feedback,
            NatureConfig::Named(s) => return Err(config_err(format!("sim.nature: unknown strategy `{s}`"))),
            NatureConfig::Elementary { breakpoints, values } => Nature::Elementary(
                NatureStrategy::new(breakpoints.clone(), values.clone()).map_err(|e| config_err(format!("sim.nature: {e}")))?,
            ),
        };
        Ok((cfg, nature))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn agent(&self) -> Result<&AgentSection, CliError> {
        self.agent.as_ref().ok_or_else(|| config_err("missing section `agent` (key `agent.contract`)"))
    }

    pub fn principal(&self) -> Result<&PrincipalSection, CliError> {
        self.principal.as_ref().ok_or_else(|| config_err("missing section `principal`"))
    }

    pub fn sim(&self) -> Result<&SimSection, CliError> {
        self.sim.as_ref().ok_or_else(|| config_err("missing section `sim`"))
    }

    pub fn verify(&self) -> Result<&VerifySection, CliError> {
        self.verify.as_ref().ok_or_else(|| config_err("missing section `verify`"))
    }

    pub fn sweep(&self) -> Result<&SweepSection, CliError> {
        self.sweep.as_ref().ok_or_else(|| config_err("missing section `sweep`"))
    }
}
