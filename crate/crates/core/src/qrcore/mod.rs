//! State spaces, transition kernels, stationary measures and quasi-reversibility checks.

mod state;
mod stationary;
mod system;

pub use state::{is_ferrers, FerrersSet, Macrostate, UnitStep};
pub use stationary::{
    aggregate_macro_kernel, check_quasi_reversibility, reachable_from_empty, solve_stationary, validate_assumption1,
    MacroChain, QuasiReversibilityReport, StationaryMeasure, ValidationReport, Violation, DEFAULT_TOL,
};
pub use system::{Edge, QueueSystem, QueueSystemBuilder, TransitionKind};
