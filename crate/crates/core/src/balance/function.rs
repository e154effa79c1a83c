use serde::{Deserialize, Serialize};

use crate::error::{QrError, Result};
use crate::qrcore::{
    check_quasi_reversibility, solve_stationary, FerrersSet, Macrostate, QuasiReversibilityReport, QueueSystem,
    TransitionKind,
};

/// A nonnegative function on a Ferrers domain with `Γ(0) = 1` and Ferrers support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BalanceFunctionRepr", into = "BalanceFunctionRepr")]
pub struct BalanceFunction {
    domain: FerrersSet,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BalanceFunctionRepr {
    n: usize,
    domain: Vec<Macrostate>,
    values: Vec<f64>,
}

impl TryFrom<BalanceFunctionRepr> for BalanceFunction {
    type Error = QrError;
    fn try_from(r: BalanceFunctionRepr) -> Result<Self> {
        if r.domain.len() != r.values.len() {
            return Err(QrError::InvalidParams(format!(
                "{} domain points but {} values",
                r.domain.len(),
                r.values.len()
            )));
        }
        let domain = FerrersSet::new(r.n, r.domain.iter().cloned())?;
        if domain.len() != r.domain.len() {
            return Err(QrError::InvalidParams("duplicate domain points".into()));
        }
        let mut values = vec![0.0; domain.len()];
        for (x, v) in r.domain.iter().zip(r.values) {
            values[domain.index_of(x).expect("member")] = v;
        }
        BalanceFunction::new(domain, values)
    }
}

impl From<BalanceFunction> for BalanceFunctionRepr {
    fn from(g: BalanceFunction) -> Self {
        BalanceFunctionRepr { n: g.domain.dim(), domain: g.domain.members().to_vec(), values: g.values }
    }
}

impl BalanceFunction {
    /// `values` is indexed like `domain.members()`.
    pub fn new(domain: FerrersSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(QrError::InvalidParams(format!(
                "{} values for a domain of {} points",
                values.len(),
                domain.len()
            )));
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(QrError::NotBalance(format!("value {v} at {}", domain.members()[k])));
        }
        let origin = domain.index_of(&Macrostate::zeros(domain.dim())).expect("origin");
        if (values[origin] - 1.0).abs() > 1e-12 {
            return Err(QrError::NotBalance(format!("value {} at the origin", values[origin])));
        }
        for (k, x) in domain.iter().enumerate() {
            if values[k] == 0.0 {
                for i in 0..domain.dim() {
                    if let Some(j) = domain.index_of(&x.plus(i)) {
                        if values[j] > 0.0 {
                            return Err(QrError::NotBalance(format!(
                                "support is not Ferrers: zero at {x} but positive at {}",
                                x.plus(i)
                            )));
                        }
                    }
                }
            }
        }
        Ok(BalanceFunction { domain, values })
    }

    pub fn from_fn(domain: FerrersSet, f: impl Fn(&Macrostate) -> f64) -> Result<Self> {
        let values = domain.iter().map(f).collect();
        Self::new(domain, values)
    }

    /// `Γ ≡ 1`.
    pub fn ones(domain: FerrersSet) -> Self {
        let values = vec![1.0; domain.len()];
        BalanceFunction { domain, values }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| QrError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn domain(&self) -> &FerrersSet {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Γ(x)`, zero outside the domain.
    pub fn value(&self, x: &Macrostate) -> f64 {
        self.domain.index_of(x).map_or(0.0, |k| self.values[k])
    }

    pub fn in_support(&self, x: &Macrostate) -> bool {
        self.value(x) > 0.0
    }

    pub fn support(&self) -> FerrersSet {
        self.domain.filter(|x| self.value(x) > 0.0).expect("support is Ferrers by construction")
    }
}

/// Admission probabilities per macrostate and class.
///
/// `probs[k][i]` is the probability of admitting a class-`i` arrival in the
/// `k`-th macrostate of the domain. Entries with `x + e_i` outside the domain
/// are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPolicy {
    domain: FerrersSet,
    probs: Vec<Vec<f64>>,
}

impl MacroPolicy {
    pub fn from_fn(domain: FerrersSet, f: impl Fn(&Macrostate, usize) -> f64) -> Result<Self> {
        let n = domain.dim();
        let mut probs = Vec::with_capacity(domain.len());
        for x in domain.iter() {
            let mut row = vec![0.0; n];
            for (i, p) in row.iter_mut().enumerate() {
                if domain.contains(&x.plus(i)) {
                    let v = f(x, i);
                    if !(0.0..=1.0).contains(&v) {
                        return Err(QrError::InvalidParams(format!("probability {v} at {x}, class {}", i + 1)));
                    }
                    *p = v;
                }
            }
            probs.push(row);
        }
        Ok(MacroPolicy { domain, probs })
    }

    pub fn domain(&self) -> &FerrersSet {
        &self.domain
    }

    /// `γ_i(x)`, zero outside the domain.
    pub fn prob(&self, x: &Macrostate, i: usize) -> f64 {
        self.domain.index_of(x).map_or(0.0, |k| self.probs[k][i])
    }

    pub fn prob_at(&self, k: usize, i: usize) -> f64 {
        self.probs[k][i]
    }
}

/// A policy together with the balance function it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPolicy {
    pub policy: MacroPolicy,
    pub source: BalanceFunction,
}

impl BalancedPolicy {
    pub fn prob(&self, x: &Macrostate, i: usize) -> f64 {
        self.policy.prob(x, i)
    }

    pub fn domain(&self) -> &FerrersSet {
        self.policy.domain()
    }
}

/// `γ_i(x) = Γ(x + e_i) / Γ(x)` on the support, zero elsewhere.
pub fn policy_from_balance(gamma: &BalanceFunction) -> Result<BalancedPolicy> {
    let domain = gamma.domain().clone();
    for x in domain.iter() {
        let g = gamma.value(x);
        for i in 0..domain.dim() {
            let up = x.plus(i);
            if g > 0.0 && domain.contains(&up) && gamma.value(&up) > g * (1.0 + 1e-12) {
                return Err(QrError::NotBalance(format!("value increases from {x} to {up}")));
            }
        }
    }
    let policy = MacroPolicy::from_fn(domain, |x, i| {
        let g = gamma.value(x);
        if g > 0.0 {
            (gamma.value(&x.plus(i)) / g).min(1.0)
        } else {
            0.0
        }
    })?;
    Ok(BalancedPolicy { policy, source: gamma.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceCheck {
    pub balanced: bool,
    /// First failing `(x, i, j)` with 0-based classes.
    pub witness: Option<(Macrostate, usize, usize)>,
    /// Path-product reconstruction, present when the policy is balanced.
    pub reconstructed: Option<BalanceFunction>,
}

/// Path products of `γ` along the canonical path that fills axes in order.
fn path_products(policy: &MacroPolicy) -> Vec<f64> {
    let domain = policy.domain();
    let mut g = vec![0.0; domain.len()];
    // Lexicographic order visits x - e_k before x.
    for (k, x) in domain.iter().enumerate() {
        g[k] = match (0..domain.dim()).rev().find(|&a| x.get(a) > 0) {
            None => 1.0,
            Some(a) => {
                let prev = x.minus(a).expect("positive coordinate");
                let j = domain.index_of(&prev).expect("Ferrers");
                g[j] * policy.prob_at(j, a)
            }
        };
    }
    g
}

/// Checks `γ_i(x) γ_j(x + e_i) = γ_i(x + e_j) γ_j(x)` wherever it applies and,
/// on success, rebuilds the balance function by path products.
pub fn check_balance_condition(policy: &MacroPolicy, tol: f64) -> BalanceCheck {
    let domain = policy.domain();
    let n = domain.dim();
    let g = path_products(policy);
    let fail = |x: &Macrostate, i, j| BalanceCheck { balanced: false, witness: Some((x.clone(), i, j)), reconstructed: None };

    for (k, x) in domain.iter().enumerate() {
        if g[k] == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if !domain.contains(&x.plus(i).plus(j)) {
                    continue;
                }
                let (gi, gj) = (policy.prob_at(k, i), policy.prob_at(k, j));
                if gi == 0.0 || gj == 0.0 {
                    continue;
                }
                let lhs = gi * policy.prob(&x.plus(i), j);
                let rhs = policy.prob(&x.plus(j), i) * gj;
                if (lhs - rhs).abs() > tol {
                    return fail(x, i, j);
                }
            }
        }
    }
    // The definition itself: Γ(x) γ_i(x) = Γ(x + e_i) on the support.
    for (k, x) in domain.iter().enumerate() {
        if g[k] == 0.0 {
            continue;
        }
        for i in 0..n {
            if let Some(j) = domain.index_of(&x.plus(i)) {
                if (g[k] * policy.prob_at(k, i) - g[j]).abs() > tol {
                    let axis = (0..n).rev().find(|&a| x.plus(i).get(a) > 0).unwrap_or(i);
                    return fail(x, i, axis);
                }
            }
        }
    }
    match BalanceFunction::new(domain.clone(), g) {
        Ok(gamma) => BalanceCheck { balanced: true, witness: None, reconstructed: Some(gamma) },
        Err(_) => BalanceCheck { balanced: false, witness: None, reconstructed: None },
    }
}

/// The families of balanced policies built in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `γ_i(x) = α_i`.
    Static { alpha: Vec<f64> },
    /// `γ_i(x) = ψ_i(x_i)`; `psi[i][l]` for `l` up to the largest class-`i` count minus one.
    Decentralized { psi: Vec<Vec<f64>> },
    /// `γ_i(x) = ψ(|x|_1)`.
    SizeBased { psi: Vec<f64> },
    /// `γ_i(x) = 1{x + e_i ∈ A}`.
    Deterministic { mask: FerrersSet },
    /// `Γ(x) = Π_{0 ≠ y ≤ x} ψ(y)`; `psi` is indexed like the domain.
    CumProd { psi: Vec<f64> },
}

fn check_unit(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(QrError::InvalidParams(format!("{name} value {p} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Builds the balance function of a family member on `domain`.
pub fn make_family(family: &Family, domain: &FerrersSet) -> Result<BalanceFunction> {
    let n = domain.dim();
    match family {
        Family::Static { alpha } => {
            if alpha.len() != n {
                return Err(QrError::InvalidParams(format!("{} static parameters for {n} classes", alpha.len())));
            }
            check_unit("alpha", alpha)?;
            BalanceFunction::from_fn(domain.clone(), |x| (0..n).map(|i| alpha[i].powi(x.get(i) as i32)).product())
        }
        Family::Decentralized { psi } => {
            if psi.len() != n {
                return Err(QrError::InvalidParams(format!("{} functions for {n} classes", psi.len())));
            }
            for (i, p) in psi.iter().enumerate() {
                check_unit("psi", p)?;
                let need = domain.max_coord(i) as usize;
                if p.len() < need {
                    return Err(QrError::InvalidParams(format!(
                        "psi for class {} has {} values, {need} needed",
                        i + 1,
                        p.len()
                    )));
                }
            }
            BalanceFunction::from_fn(domain.clone(), |x| {
                (0..n).map(|i| psi[i][..x.get(i) as usize].iter().product::<f64>()).product()
            })
        }
        Family::SizeBased { psi } => {
            check_unit("psi", psi)?;
            let need = domain.iter().map(|x| x.total()).max().unwrap_or(0) as usize;
            if psi.len() < need {
                return Err(QrError::InvalidParams(format!("psi has {} values, {need} needed", psi.len())));
            }
            BalanceFunction::from_fn(domain.clone(), |x| psi[..x.total() as usize].iter().product())
        }
        Family::Deterministic { mask } => {
            if !mask.is_subset(domain) {
                return Err(QrError::DomainMismatch("mask is not contained in the domain".into()));
            }
            BalanceFunction::from_fn(domain.clone(), |x| if mask.contains(x) { 1.0 } else { 0.0 })
        }
        Family::CumProd { psi } => {
            if psi.len() != domain.len() {
                return Err(QrError::InvalidParams(format!("psi has {} values for {} points", psi.len(), domain.len())));
            }
            check_unit("psi", psi)?;
            let values = domain
                .iter()
                .map(|x| {
                    domain
                        .iter()
                        .enumerate()
                        .filter(|(_, y)| !y.is_zero() && y.leq(x))
                        .map(|(k, _)| psi[k])
                        .product()
                })
                .collect();
            BalanceFunction::new(domain.clone(), values)
        }
    }
}

/// Multiplies each arrival rate out of `s` by `prob(s, i)`; other rates are unchanged.
pub fn apply_state_control(sys: &QueueSystem, prob: impl Fn(usize, usize) -> f64) -> Result<QueueSystem> {
    sys.map_rates(|_, e| match e.kind {
        TransitionKind::Arrival(i) => e.rate * prob(e.from, i),
        _ => e.rate,
    })
}

/// Controls a system with a macrostate policy defined on `|S|`.
pub fn apply_control(sys: &QueueSystem, policy: &MacroPolicy) -> Result<QueueSystem> {
    if policy.domain() != sys.image() {
        return Err(QrError::DomainMismatch("policy domain differs from the image of the counting map".into()));
    }
    apply_state_control(sys, |s, i| policy.prob_at(sys.macro_index(s), i))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    /// `L∞` distance between `Π Γ` (normalized) and the solved controlled distribution.
    pub linf: f64,
    pub controlled: QuasiReversibilityReport,
    pub passes: bool,
}

/// Compares the product `Π(s) Γ(|s|)` with the stationary distribution of the controlled system.
pub fn verify_theorem1(sys: &QueueSystem, gamma: &BalanceFunction, tol: f64) -> Result<Theorem1Report> {
    let pi = solve_stationary(sys)?;
    let policy = policy_from_balance(gamma)?;
    let controlled = apply_control(sys, &policy.policy)?;
    let pi_c = solve_stationary(&controlled)?;
    let mut prod: Vec<f64> = (0..sys.n_states()).map(|s| pi.get(s) * gamma.value(sys.counting(s))).collect();
    let z: f64 = prod.iter().sum();
    prod.iter_mut().for_each(|v| *v /= z);
    let linf = prod.iter().zip(&pi_c.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let qr = check_quasi_reversibility(&controlled, &pi_c, tol)?;
    Ok(Theorem1Report { linf, passes: linf <= tol && qr.quasi_reversible, controlled: qr })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[u32]) -> Macrostate {
        Macrostate(v.to_vec())
    }

    #[test]
    fn static_policy_probabilities() {
        let dom = FerrersSet::boxed(&[3, 3]);
        let g = make_family(&Family::Static { alpha: vec![0.5, 0.25] }, &dom).unwrap();
        let p = policy_from_balance(&g).unwrap();
        assert_eq!(p.prob(&m(&[1, 1]), 0), 0.5);
        assert_eq!(p.prob(&m(&[1, 1]), 1), 0.25);
        assert_eq!(p.prob(&m(&[3, 1]), 0), 0.0);
    }

    #[test]
    fn deterministic_mask_policy() {
        let dom = FerrersSet::boxed(&[5, 5]);
        let mask = FerrersSet::new(2, vec![m(&[0, 0]), m(&[1, 0]), m(&[2, 0])]).unwrap();
        let g = make_family(&Family::Deterministic { mask }, &dom).unwrap();
        let p = policy_from_balance(&g).unwrap();
        assert_eq!(p.prob(&m(&[0, 0]), 0), 1.0);
        assert_eq!(p.prob(&m(&[1, 0]), 0), 1.0);
        assert_eq!(p.prob(&m(&[2, 0]), 0), 0.0);
        for x in [m(&[0, 0]), m(&[1, 0]), m(&[2, 0])] {
            assert_eq!(p.prob(&x, 1), 0.0);
        }
        assert_eq!(p.prob(&m(&[3, 3]), 0), 0.0);
    }

    #[test]
    fn imbalanced_witness() {
        let dom = FerrersSet::boxed(&[2, 2]);
        let pol = MacroPolicy::from_fn(dom, |x, i| if i == 0 { (x.get(1) == 0) as u8 as f64 } else { 1.0 }).unwrap();
        let chk = check_balance_condition(&pol, 1e-12);
        assert!(!chk.balanced);
        assert_eq!(chk.witness, Some((m(&[0, 0]), 0, 1)));
    }

    #[test]
    fn size_based_and_cum_prod() {
        let dom = FerrersSet::boxed(&[3, 3]);
        let g = make_family(&Family::SizeBased { psi: vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0] }, &dom).unwrap();
        assert_eq!(g.value(&m(&[1, 1])), 1.0);
        assert_eq!(g.value(&m(&[2, 1])), 0.0);

        let dom = FerrersSet::boxed(&[2, 2]);
        let psi = vec![0.9; dom.len()];
        let g = make_family(&Family::CumProd { psi }, &dom).unwrap();
        // Three non-origin points lie below (1,1); the origin factor is fixed to one.
        assert!((g.value(&m(&[1, 1])) - 0.9f64.powi(3)).abs() < 1e-15);
        assert!((g.value(&m(&[1, 1])) * 0.9 - 0.6561).abs() < 1e-15);
    }

    #[test]
    fn rejects_increasing_gamma() {
        let dom = FerrersSet::boxed(&[1]);
        let g = BalanceFunction::new(dom, vec![1.0, 2.0]).unwrap();
        assert!(matches!(policy_from_balance(&g), Err(QrError::NotBalance(_))));
    }

    #[test]
    fn json_round_trip() {
        let dom = FerrersSet::boxed(&[1, 2]);
        let g = make_family(&Family::Static { alpha: vec![0.5, 0.3] }, &dom).unwrap();
        let back = BalanceFunction::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        let shuffled = r#"{"n":1,"domain":[[1],[0]],"values":[0.5,1.0]}"#;
        let g = BalanceFunction::from_json(shuffled).unwrap();
        assert_eq!(g.values(), &[1.0, 0.5]);
        assert!(BalanceFunction::from_json(r#"{"n":1,"domain":[[0],[1]],"values":[0.5,1.0]}"#).is_err());
    }
}
