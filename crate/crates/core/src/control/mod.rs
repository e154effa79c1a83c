//! Admission control: exact optimization, best balanced policies and LP export.

mod balanced;
mod lp;
pub mod lpformat;
mod mdp;
mod problem;

pub use balanced::{
    balanced_objective, best_balanced, count_masks_2d, enumerate_masks_2d, loss, mask_gain_slow, sweep, sweep_csv,
    LossReport, SweepRow, MASK_CAP,
};
pub use lp::{eta_var, export_lp, flow_solution, gamma_var, mask_solution, pi_var, LpVariant};
pub use lpformat::{LpConstraint, LpProblem, RowOp, Sense};
pub use mdp::{certify_gain, optimal_policy, worst_gain, OptimalPolicy};
pub use problem::{
    gain, processor_sharing, toy_example, AdmissionProblem, PolicyTable, RewardSpec, ToyId, REWARD_PATH,
};
