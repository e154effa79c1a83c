//! Learning balanced admission policies on the redundancy environment.

mod agents;
mod exact;

pub use agents::{
    decade_stride, policy_probs, run_ac, run_q, run_sage, sage_gradient_estimate, AcConfig, QConfig, RunLog,
    RunRecord, RunSpec, RunSummary, SageConfig, Transition,
};
pub use exact::{
    expected_step_reward, oi_macro_measure, truncation_mass, ExactGradient, ExactModel, MIN_TRUNCATION_MASS,
};
