//! Exact simulation of queueing systems and the arrival-embedded redundancy environment.

mod ctmc;
mod env;

pub use ctmc::{simulate_ctmc, stream_rng, SimConfig, SimEvent, SimEventKind, Trajectory};
pub use env::{env_reset, EnvEvent, EnvEventKind, EnvState, RedundancyEnv, StepOutcome};
