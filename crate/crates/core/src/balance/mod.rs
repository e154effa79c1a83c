//! Balance functions, balanced policies and their parameterized families.

mod decompose;
mod function;
mod theta;

pub use decompose::{check_monotonicity, check_policy_monotonicity, decompose_vertex, DecompositionResult, MonotonicityReport};
pub use function::{
    apply_control, apply_state_control, check_balance_condition, make_family, policy_from_balance, verify_theorem1,
    BalanceCheck, BalanceFunction, BalancedPolicy, Family, MacroPolicy, Theorem1Report,
};
pub use theta::{sigmoid, SparseGrad, ThetaFamily, ThetaParam, DYNAMIC_THETA_INIT};
