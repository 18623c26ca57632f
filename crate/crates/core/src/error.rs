use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("volatility square {sigma_sq} is not attainable on the nature grid")]
    SigmaUnattainable { sigma_sq: f64 },

    #[error("coercivity not guaranteed: radius search needs q_tilde < 0, got {q_tilde}")]
    CoercivityNotGuaranteed { q_tilde: f64 },

    #[error("radius search did not certify an interior optimum up to radius {last_radius}")]
    RadiusNotCertified { last_radius: f64 },

    #[error("explicit scheme unstable: dt = {dt} exceeds admissible dt = {max_dt}")]
    Stability { dt: f64, max_dt: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("participation infeasible: reservation {reservation} above y-domain top {top}")]
    InfeasibleParticipation { reservation: f64, top: f64 },

    #[error("non-finite sample on path {path}")]
    NonFinite { path: usize },

    #[error("{quarantined} of {paths} paths quarantined (limit 1%)")]
    Quarantine { quarantined: usize, paths: usize },

    #[error("belief intervals overlap: agent [{agent_lo}, {agent_hi}], principal [{principal_lo}, {principal_hi}]")]
    OverlappingBeliefs {
        agent_lo: f64,
        agent_hi: f64,
        principal_lo: f64,
        principal_hi: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
