//! Numerical solvers for continuous-time contracting under volatility
//! uncertainty: agent and principal Hamiltonians, the agent's robust value
//! equation, the principal's HJBI equation and a Monte Carlo engine for the
//! coupled state dynamics.

pub mod agent;
pub mod error;
pub mod grid;
pub mod hamiltonians;
pub mod mc;
pub mod principal;
pub mod model;
pub mod sim;

pub use agent::{AgentSolution, ContractFunction};
pub use error::{Error, Result};
pub use grid::GridSpec;
pub use hamiltonians::{Derivatives, GameResult, Hamiltonians, SaddleResult};
pub use model::{presets, Interval, ModelSpec, Utility};
pub use sim::{Nature, NatureStrategy, SimConfig, SimResult};
