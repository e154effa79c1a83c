use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::state::{FerrersSet, Macrostate};
use super::system::{QueueSystem, TransitionKind};
use crate::error::{QrError, Result};

/// Default tolerance for residual checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Condition estimate above which the LU solution is replaced by least squares.
const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Item of the unichain assumption (1 to 4).
    pub item: u8,
    pub witness: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub passes: bool,
    /// Microstates reachable from the empty state along non-decreasing paths.
    pub recurrent_set: Vec<usize>,
    pub violations: Vec<Violation>,
}

/// Breadth-first search from `start` over edges accepted by `follow`.
fn search(sys: &QueueSystem, start: usize, forward: bool, follow: impl Fn(TransitionKind) -> bool) -> Vec<bool> {
    let mut seen = vec![false; sys.n_states()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        let next: Vec<usize> = if forward {
            sys.out_edges(s).filter(|(_, e)| follow(e.kind)).map(|(_, e)| e.to).collect()
        } else {
            sys.in_edges(s).filter(|(_, e)| follow(e.kind)).map(|(_, e)| e.from).collect()
        };
        for t in next {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    seen
}

/// States reachable from the empty state along any positive-rate path.
pub fn reachable_from_empty(sys: &QueueSystem) -> Vec<bool> {
    search(sys, sys.empty_state(), true, |_| true)
}

/// Checks the four items of the unichain assumption and reports the first witness of each failure.
pub fn validate_assumption1(sys: &QueueSystem) -> ValidationReport {
    let non_decreasing = |k: TransitionKind| !matches!(k, TransitionKind::Departure(_));
    let non_increasing = |k: TransitionKind| !matches!(k, TransitionKind::Arrival(_));

    let rec = search(sys, sys.empty_state(), true, non_decreasing);
    let reach = reachable_from_empty(sys);
    // Reverse search from the empty state: which states can drain to it.
    let drains = search(sys, sys.empty_state(), false, non_increasing);

    let mut violations = Vec::new();
    if let Some(s) = (0..sys.n_states()).find(|&s| reach[s] && !rec[s]) {
        violations.push(Violation { item: 2, witness: s });
    }
    if let Some(s) = (0..sys.n_states()).find(|&s| !drains[s]) {
        violations.push(Violation { item: 3, witness: s });
    }
    let recurrent_set: Vec<usize> = (0..sys.n_states()).filter(|&s| rec[s]).collect();
    let image: BTreeSet<Macrostate> = recurrent_set.iter().map(|&s| sys.counting(s).clone()).collect();
    if !super::state::is_ferrers(sys.n_classes(), &image) {
        let witness = recurrent_set
            .iter()
            .copied()
            .find(|&s| {
                let x = sys.counting(s);
                (0..sys.n_classes()).any(|i| x.minus(i).is_some_and(|y| !image.contains(&y)))
            })
            .unwrap_or(sys.empty_state());
        violations.push(Violation { item: 4, witness });
    }
    ValidationReport { passes: violations.is_empty(), recurrent_set, violations }
}

/// A measure on the microstates of a system, indexed like the system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryMeasure {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl StationaryMeasure {
    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn normalize(mut self) -> Self {
        let z = self.sum();
        self.values.iter_mut().for_each(|v| *v /= z);
        self.normalized = true;
        self
    }

    /// Largest absolute global-balance residual.
    pub fn global_residual(&self, sys: &QueueSystem) -> f64 {
        (0..sys.n_states())
            .map(|s| {
                let out = self.values[s] * sys.outflow(s);
                let inn: f64 = sys.in_edges(s).filter(|(_, e)| e.from != s).map(|(_, e)| self.values[e.from] * e.rate).sum();
                (out - inn).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Stationary distribution of the chain started from the empty state.
///
/// The linear system is restricted to the states reachable from the empty
/// state; every one of them must be able to return to it, otherwise the chain
/// is not unichain with the empty state recurrent and an error is returned.
pub fn solve_stationary(sys: &QueueSystem) -> Result<StationaryMeasure> {
    let reach = reachable_from_empty(sys);
    let back = search(sys, sys.empty_state(), false, |_| true);
    if let Some(s) = (0..sys.n_states()).find(|&s| reach[s] && !back[s]) {
        return Err(QrError::Assumption(format!(
            "state {} ({:?}) is reachable from the empty state but cannot return to it",
            s,
            sys.key(s)
        )));
    }
    let states: Vec<usize> = (0..sys.n_states()).filter(|&s| reach[s]).collect();
    let m = states.len();
    let mut local = vec![usize::MAX; sys.n_states()];
    for (k, &s) in states.iter().enumerate() {
        local[s] = k;
    }

    let mut values = vec![0.0; sys.n_states()];
    if m == 1 {
        values[states[0]] = 1.0;
        return Ok(StationaryMeasure { values, normalized: true });
    }

    // Rows are balance equations: sum_s pi(s) Q(s, t) = 0 for each t.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (k, &s) in states.iter().enumerate() {
        for (_, e) in sys.out_edges(s) {
            if e.to == s {
                continue;
            }
            let t = local[e.to];
            a[(t, k)] += e.rate;
            a[(k, k)] -= e.rate;
        }
    }
    let balance = a.clone();
    for k in 0..m {
        a[(m - 1, k)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;

    let lu = a.clone().lu();
    let diag = lu.u().diagonal();
    let dmax = diag.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let dmin = diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let mut x = if dmin > 0.0 && dmax / dmin < COND_LIMIT { lu.solve(&rhs) } else { None };

    if x.is_none() {
        // Least squares on all balance equations plus the normalization row.
        let mut full = DMatrix::<f64>::zeros(m + 1, m);
        full.view_mut((0, 0), (m, m)).copy_from(&balance);
        for k in 0..m {
            full[(m, k)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(m + 1);
        b[m] = 1.0;
        let svd = full.svd(true, true);
        x = svd.solve(&b, 1e-14).ok();
    }
    let x = x.ok_or_else(|| QrError::Solver("stationary system is singular".into()))?;

    let scale = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for (k, &s) in states.iter().enumerate() {
        let v = x[k];
        if v < -1e-9 * scale {
            return Err(QrError::Solver(format!("negative stationary mass {v:e} at state {s}")));
        }
        values[s] = v.max(0.0);
    }
    let pi = StationaryMeasure { values, normalized: false }.normalize();
    let res = pi.global_residual(sys);
    let rate_scale = (0..sys.n_states()).map(|s| sys.outflow(s)).fold(1.0, f64::max);
    if !(res <= 1e-8 * rate_scale) {
        return Err(QrError::Solver(format!("global balance residual {res:e} after solve")));
    }
    Ok(pi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiReversibilityReport {
    /// Largest arrival partial-balance residual over all (state, class).
    pub max_residual: f64,
    /// Microstate and class attaining it.
    pub worst: Option<(usize, usize)>,
    /// Largest residual of the complementary partial balance (departures and internal moves).
    pub complementary_residual: f64,
    pub global_residual: f64,
    pub quasi_reversible: bool,
}

/// Compares, for each state and class, the flow out through class arrivals
/// with the flow in through class departures.
pub fn check_quasi_reversibility(sys: &QueueSystem, pi: &StationaryMeasure, tol: f64) -> Result<QuasiReversibilityReport> {
    if pi.values.len() != sys.n_states() {
        return Err(QrError::DomainMismatch(format!(
            "measure has {} entries, system has {} states",
            pi.values.len(),
            sys.n_states()
        )));
    }
    let n = sys.n_classes();
    let mut max_residual = 0.0f64;
    let mut worst = None;
    let mut complementary = 0.0f64;
    for s in 0..sys.n_states() {
        let mut out = vec![0.0; n];
        let mut inn = vec![0.0; n];
        let mut other_out = 0.0;
        let mut other_in = 0.0;
        for (_, e) in sys.out_edges(s) {
            match e.kind {
                TransitionKind::Arrival(i) => out[i] += e.rate,
                _ if e.to != s => other_out += e.rate,
                _ => {}
            }
        }
        for (_, e) in sys.in_edges(s) {
            match e.kind {
                TransitionKind::Departure(i) => inn[i] += pi.values[e.from] * e.rate,
                _ if e.from != s => other_in += pi.values[e.from] * e.rate,
                _ => {}
            }
        }
        for i in 0..n {
            let r = (pi.values[s] * out[i] - inn[i]).abs();
            if r > max_residual || worst.is_none() {
                max_residual = max_residual.max(r);
                worst = Some((s, i));
            }
        }
        complementary = complementary.max((pi.values[s] * other_out - other_in).abs());
    }
    Ok(QuasiReversibilityReport {
        max_residual,
        worst,
        complementary_residual: complementary,
        global_residual: pi.global_residual(sys),
        quasi_reversible: max_residual <= tol,
    })
}

/// Birth-and-death chain on macrostates obtained by aggregating a stationary measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroChain {
    pub domain: FerrersSet,
    pub pi: Vec<f64>,
    /// `up[x][i]` is the rate from `x` to `x + e_i`.
    pub up: Vec<Vec<f64>>,
    /// `down[x][i]` is the rate from `x` to `x - e_i`.
    pub down: Vec<Vec<f64>>,
    /// Largest `|pi(x) up(x,i) - pi(x+e_i) down(x+e_i,i)|`.
    pub detailed_balance_residual: f64,
}

impl MacroChain {
    pub fn pi_of(&self, x: &Macrostate) -> f64 {
        self.domain.index_of(x).map_or(0.0, |k| self.pi[k])
    }
}

/// Aggregates the microstate chain into macrostate masses and rates.
pub fn aggregate_macro_kernel(sys: &QueueSystem, pi: &StationaryMeasure) -> Result<MacroChain> {
    let n = sys.n_classes();
    let support: BTreeSet<Macrostate> =
        (0..sys.n_states()).filter(|&s| pi.values[s] > 0.0).map(|s| sys.counting(s).clone()).collect();
    let domain = FerrersSet::new(n, support).map_err(|e| QrError::Aggregation(format!("support: {e}")))?;
    let d = domain.len();
    let mut mass = vec![0.0; d];
    let mut up = vec![vec![0.0; n]; d];
    let mut down = vec![vec![0.0; n]; d];
    for s in 0..sys.n_states() {
        let p = pi.values[s];
        if p == 0.0 {
            continue;
        }
        let x = domain.index_of(sys.counting(s)).expect("support member");
        mass[x] += p;
        for (_, e) in sys.out_edges(s) {
            match e.kind {
                TransitionKind::Arrival(i) => up[x][i] += p * e.rate,
                TransitionKind::Departure(i) => down[x][i] += p * e.rate,
                TransitionKind::Internal => {}
            }
        }
    }
    let total: f64 = mass.iter().sum();
    for x in 0..d {
        if mass[x] <= 0.0 {
            return Err(QrError::Aggregation(format!("zero mass at {}", domain.members()[x])));
        }
        for i in 0..n {
            up[x][i] /= mass[x];
            down[x][i] /= mass[x];
        }
        mass[x] /= total;
    }
    let mut residual = 0.0f64;
    for (k, x) in domain.iter().enumerate() {
        for i in 0..n {
            let flow_up = mass[k] * up[k][i];
            let flow_down = domain.index_of(&x.plus(i)).map_or(0.0, |j| mass[j] * down[j][i]);
            residual = residual.max((flow_up - flow_down).abs());
        }
    }
    Ok(MacroChain { domain, pi: mass, up, down, detailed_balance_residual: residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrcore::system::QueueSystemBuilder;

    fn birth_death(rates_up: &[f64], mu: f64) -> QueueSystem {
        let cap = rates_up.len() as u32;
        let mut b = QueueSystemBuilder::new(1);
        for k in 0..=cap {
            b.add_state(vec![k], Macrostate(vec![k])).unwrap();
        }
        for k in 0..cap {
            b.add_edge(vec![k], vec![k + 1], rates_up[k as usize]).unwrap();
            b.add_edge(vec![k + 1], vec![k], mu).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn mm12_stationary() {
        let sys = birth_death(&[1.0, 1.0], 2.0);
        let pi = solve_stationary(&sys).unwrap();
        let expect = [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0];
        for k in 0..3 {
            assert!((pi.values[k] - expect[k]).abs() < 1e-14);
        }
        let qr = check_quasi_reversibility(&sys, &pi, DEFAULT_TOL).unwrap();
        assert!(qr.quasi_reversible);
        assert!(qr.max_residual < 1e-15);
    }

    #[test]
    fn zero_arrivals_give_point_mass() {
        let sys = birth_death(&[0.0, 0.0, 0.0], 1.0);
        let pi = solve_stationary(&sys).unwrap();
        assert_eq!(pi.values, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn birth_death_validates() {
        let sys = birth_death(&[1.0, 1.0, 1.0], 1.0);
        let rep = validate_assumption1(&sys);
        assert!(rep.passes);
        assert_eq!(rep.recurrent_set, vec![0, 1, 2, 3]);

        let sys = birth_death(&[1.0, 1.0, 0.0], 1.0);
        let rep = validate_assumption1(&sys);
        assert!(rep.passes);
        assert_eq!(rep.recurrent_set, vec![0, 1, 2]);
    }

    #[test]
    fn identity_aggregation() {
        let sys = birth_death(&[1.0, 0.5], 2.0);
        let pi = solve_stationary(&sys).unwrap();
        let mc = aggregate_macro_kernel(&sys, &pi).unwrap();
        assert_eq!(mc.pi, pi.values);
        assert_eq!(mc.up[0][0], 1.0);
        assert_eq!(mc.down[2][0], 2.0);
        assert!(mc.detailed_balance_residual < 1e-15);
    }
}
