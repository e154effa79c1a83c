use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::Serialize;

use super::function::{BalanceFunction, BalancedPolicy, MacroPolicy};
use crate::qrcore::{FerrersSet, Macrostate};

/// Convex combination of deterministic masks that reproduces a balance function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub masks: Vec<FerrersSet>,
    pub coefficients: Vec<f64>,
    /// Point removed after each mask.
    pub visit_order: Vec<Macrostate>,
}

impl DecompositionResult {
    /// `Σ_k α_k 1{x ∈ V_k}`.
    pub fn evaluate(&self, x: &Macrostate) -> f64 {
        self.masks.iter().zip(&self.coefficients).filter(|(v, _)| v.contains(x)).map(|(_, a)| a).sum()
    }
}

/// Greedy peeling: repeatedly remove the maximal point with the smallest value.
///
/// Ties go to the lexicographically smallest point.
pub fn decompose_vertex(gamma: &BalanceFunction) -> DecompositionResult {
    let n = gamma.domain().dim();
    let mut remaining: BTreeSet<Macrostate> = gamma.domain().iter().cloned().collect();
    let mut masks = Vec::new();
    let mut coefficients = Vec::new();
    let mut visit_order = Vec::new();
    let mut prev = 0.0;
    while !remaining.is_empty() {
        let mut best: Option<(&Macrostate, f64)> = None;
        for x in remaining.iter() {
            if (0..n).any(|i| remaining.contains(&x.plus(i))) {
                continue;
            }
            let v = gamma.value(x);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((x, v));
            }
        }
        let (y, v) = best.expect("a finite nonempty set has a maximal point");
        let y = y.clone();
        masks.push(FerrersSet::new(n, remaining.iter().cloned()).expect("peeling keeps the set Ferrers"));
        coefficients.push(v - prev);
        prev = v;
        remaining.remove(&y);
        visit_order.push(y);
    }
    DecompositionResult { masks, coefficients, visit_order }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub consistent: bool,
    /// `(x, i, j)` with 0-based classes where the two comparisons disagree.
    pub counterexample: Option<(Macrostate, usize, usize)>,
    pub checked: usize,
}

fn compare(a: f64, b: f64, tol: f64) -> Ordering {
    if (a - b).abs() <= tol {
        Ordering::Equal
    } else if a < b {
        Ordering::Less
    } else {
        Ordering::Greater
    }
}

/// For each applicable `(x, i, j)`, checks that `γ_i(x)` compares to `γ_i(x + e_j)`
/// the same way `γ_j(x)` compares to `γ_j(x + e_i)`.
///
/// Applies wherever both arrivals are admitted with positive probability at `x`
/// and `x + e_i + e_j` is in the domain.
pub fn check_policy_monotonicity(policy: &MacroPolicy, tol: f64) -> MonotonicityReport {
    let domain = policy.domain();
    let n = domain.dim();
    let mut checked = 0;
    for x in domain.iter() {
        for i in 0..n {
            for j in (i + 1)..n {
                if !domain.contains(&x.plus(i).plus(j)) {
                    continue;
                }
                let (gi, gj) = (policy.prob(x, i), policy.prob(x, j));
                if gi == 0.0 || gj == 0.0 {
                    continue;
                }
                checked += 1;
                let left = compare(gi, policy.prob(&x.plus(j), i), tol);
                let right = compare(gj, policy.prob(&x.plus(i), j), tol);
                if left != right {
                    return MonotonicityReport { consistent: false, counterexample: Some((x.clone(), i, j)), checked };
                }
            }
        }
    }
    MonotonicityReport { consistent: true, counterexample: None, checked }
}

pub fn check_monotonicity(policy: &BalancedPolicy, tol: f64) -> MonotonicityReport {
    check_policy_monotonicity(&policy.policy, tol)
}
