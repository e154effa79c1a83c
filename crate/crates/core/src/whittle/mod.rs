//! Multi-class Whittle networks with class-preserving internal routing.
//!
//! A state is an `n x m` matrix of counts, stored row-major as a flat slice:
//! entry `i * m + k` is the number of class-`i` elements at site `k`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balance::{apply_control, apply_state_control, policy_from_balance, BalanceFunction};
use crate::error::{QrError, Result};
use crate::oiqueue::{build_oi_system, OISpec};
use crate::qrcore::{solve_stationary, FerrersSet, Macrostate, QueueSystem, QueueSystemBuilder};

/// Service rate `φ_{ik}(s)` of label `ik` (flat index `i * m + k`) in state `s`.
#[derive(Clone)]
pub enum ServiceRate {
    /// `φ_{ik}(s) = c`.
    Constant(f64),
    /// `φ_{ik}(s) = c · s_{ik}`.
    PerLabelLinear(f64),
    /// `φ_{ik}(s) = φ_0 Φ(s - e_{ik}) / Φ(s)`, balanced by construction.
    FromBalance,
    Custom(Arc<dyn Fn(usize, &[u32]) -> f64 + Send + Sync>),
}

impl fmt::Debug for ServiceRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceRate::Constant(c) => write!(f, "Constant({c})"),
            ServiceRate::PerLabelLinear(c) => write!(f, "PerLabelLinear({c})"),
            ServiceRate::FromBalance => write!(f, "FromBalance"),
            ServiceRate::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Balance function `Φ` on label matrices.
#[derive(Clone)]
pub enum PhiSpec {
    /// `Φ ≡ 1`.
    Unit,
    /// `Φ(s) = Π_{ik} 1 / s_{ik}!`.
    InverseFactorial,
    Custom(Arc<dyn Fn(&[u32]) -> f64 + Send + Sync>),
}

impl fmt::Debug for PhiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiSpec::Unit => write!(f, "Unit"),
            PhiSpec::InverseFactorial => write!(f, "InverseFactorial"),
            PhiSpec::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl PhiSpec {
    pub fn eval(&self, s: &[u32]) -> f64 {
        match self {
            PhiSpec::Unit => 1.0,
            PhiSpec::InverseFactorial => s.iter().map(|&c| (1..=c).map(|v| 1.0 / v as f64).product::<f64>()).product(),
            PhiSpec::Custom(f) => f(s),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WhittleSpec {
    pub n: usize,
    pub m: usize,
    /// Routing matrix over `{0} ∪ labels`; label `ik` has index `1 + i * m + k`.
    pub p: Vec<Vec<f64>>,
    pub phi0: f64,
    pub phi: ServiceRate,
    pub big_phi: Option<PhiSpec>,
}

impl WhittleSpec {
    pub fn labels(&self) -> usize {
        self.n * self.m
    }

    pub fn label(&self, i: usize, k: usize) -> usize {
        i * self.m + k
    }

    pub fn class_of(&self, label: usize) -> usize {
        label / self.m
    }

    /// `P` entry between two labels, 0 standing for the outside.
    pub fn route(&self, from: Option<usize>, to: Option<usize>) -> f64 {
        self.p[from.map_or(0, |l| l + 1)][to.map_or(0, |l| l + 1)]
    }

    pub fn service_rate(&self, label: usize, s: &[u32]) -> Result<f64> {
        match &self.phi {
            ServiceRate::Constant(c) => Ok(*c),
            ServiceRate::PerLabelLinear(c) => Ok(c * s[label] as f64),
            ServiceRate::FromBalance => {
                let phi = self.big_phi.as_ref().ok_or_else(|| {
                    QrError::InvalidParams("service rates derived from a balance function that is not supplied".into())
                })?;
                if s[label] == 0 {
                    return Ok(0.0);
                }
                let mut prev = s.to_vec();
                prev[label] -= 1;
                Ok(self.phi0 * phi.eval(&prev) / phi.eval(s))
            }
            ServiceRate::Custom(f) => Ok(f(label, s)),
        }
    }

    pub fn counting(&self, s: &[u32]) -> Macrostate {
        Macrostate((0..self.n).map(|i| s[i * self.m..(i + 1) * self.m].iter().sum()).collect())
    }

    /// Checks the shape, stochasticity and class preservation of `P`.
    pub fn validate_routing(&self) -> Result<()> {
        let d = 1 + self.labels();
        if self.n == 0 || self.m == 0 {
            return Err(QrError::InvalidParams("need at least one class and one site".into()));
        }
        if !(self.phi0.is_finite() && self.phi0 > 0.0) {
            return Err(QrError::InvalidParams(format!("phi0 = {} must be positive", self.phi0)));
        }
        if self.p.len() != d || self.p.iter().any(|r| r.len() != d) {
            return Err(QrError::InvalidParams(format!("routing matrix must be {d} x {d}")));
        }
        for (a, row) in self.p.iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(QrError::InvalidParams(format!("routing entry {v} in row {a}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(QrError::InvalidParams(format!("row {a} of the routing matrix sums to {sum}")));
            }
        }
        for a in 0..self.labels() {
            for b in 0..self.labels() {
                if self.class_of(a) != self.class_of(b) && self.route(Some(a), Some(b)) != 0.0 {
                    return Err(QrError::InvalidParams(format!(
                        "routing from label {} to label {} changes the class",
                        self.label_name(a),
                        self.label_name(b)
                    )));
                }
            }
        }
        Ok(())
    }

    /// 1-based `(class, site)` name of a label.
    pub fn label_name(&self, label: usize) -> String {
        format!("({},{})", label / self.m + 1, label % self.m + 1)
    }
}

/// Solves the per-class traffic equations `λ_{ik} = P_{0,ik} + Σ_l λ_{il} P_{il,ik}`.
///
/// Returns `λ` indexed by flat label.
pub fn solve_traffic(spec: &WhittleSpec) -> Result<Vec<f64>> {
    spec.validate_routing()?;
    let (n, m) = (spec.n, spec.m);
    let mut lambda = vec![0.0; spec.labels()];
    for i in 0..n {
        let labels: Vec<usize> = (0..m).map(|k| spec.label(i, k)).collect();
        // Reachability from the outside and back to it within the class.
        let mut from_out: Vec<bool> = labels.iter().map(|&l| spec.route(None, Some(l)) > 0.0).collect();
        let mut to_out: Vec<bool> = labels.iter().map(|&l| spec.route(Some(l), None) > 0.0).collect();
        for _ in 0..m {
            for a in 0..m {
                for b in 0..m {
                    if spec.route(Some(labels[a]), Some(labels[b])) > 0.0 {
                        from_out[b] |= from_out[a];
                        to_out[a] |= to_out[b];
                    }
                }
            }
        }
        if let Some(k) = (0..m).find(|&k| !(from_out[k] && to_out[k])) {
            return Err(QrError::InvalidParams(format!(
                "routing is not irreducible: label {} is not on a path from and back to the outside",
                spec.label_name(labels[k])
            )));
        }
        let mut a = DMatrix::<f64>::identity(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for k in 0..m {
            b[k] = spec.route(None, Some(labels[k]));
            for l in 0..m {
                a[(k, l)] -= spec.route(Some(labels[l]), Some(labels[k]));
            }
        }
        let x = a.lu().solve(&b).ok_or_else(|| QrError::Solver(format!("traffic equations of class {} are singular", i + 1)))?;
        for k in 0..m {
            lambda[labels[k]] = x[k];
        }
        // Flow conservation per class.
        let inflow: f64 = labels.iter().map(|&l| spec.route(None, Some(l))).sum();
        let outflow: f64 = labels.iter().map(|&l| lambda[l] * spec.route(Some(l), None)).sum();
        if (inflow - outflow).abs() > 1e-12 * inflow.max(1.0) {
            return Err(QrError::Solver(format!(
                "class {} traffic is not conserved: {inflow} in, {outflow} out",
                i + 1
            )));
        }
    }
    Ok(lambda)
}

/// State space of a truncated Whittle network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhittleTruncation {
    /// All label matrices whose class totals lie in the set; closed under internal moves.
    ClassTotals(FerrersSet),
    /// Entrywise caps on the label matrix; only valid if no internal move leaves the box.
    Entrywise(Vec<u32>),
}

impl WhittleTruncation {
    /// Enumerates the flattened label matrices in lexicographic order.
    pub fn states(&self, spec: &WhittleSpec) -> Result<Vec<Vec<u32>>> {
        let d = spec.labels();
        match self {
            WhittleTruncation::Entrywise(caps) => {
                if caps.len() != d {
                    return Err(QrError::InvalidParams(format!("{} caps for {d} labels", caps.len())));
                }
                Ok(FerrersSet::boxed(caps).members().iter().map(|x| x.0.clone()).collect())
            }
            WhittleTruncation::ClassTotals(totals) => {
                if totals.dim() != spec.n {
                    return Err(QrError::InvalidParams(format!("class-total truncation of dimension {}", totals.dim())));
                }
                let caps: Vec<u32> = (0..d).map(|l| totals.max_coord(spec.class_of(l))).collect();
                Ok(FerrersSet::boxed(&caps)
                    .members()
                    .iter()
                    .filter(|s| totals.contains(&spec.counting(&s.0)))
                    .map(|x| x.0.clone())
                    .collect())
            }
        }
    }

    pub fn as_ferrers(&self, spec: &WhittleSpec) -> Result<FerrersSet> {
        FerrersSet::new(spec.labels(), self.states(spec)?.into_iter().map(Macrostate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiBalanceReport {
    pub balanced: bool,
    /// State and flat label where `Φ(s) φ_0 ≠ Φ(s + e_l) φ_l(s + e_l)`.
    pub witness: Option<(Vec<u32>, usize)>,
}

/// Checks `Φ(s) φ_0 = Φ(s + e_l) φ_l(s + e_l)` on the truncation, with relative tolerance `tol`.
pub fn check_phi_balance(spec: &WhittleSpec, truncation: &WhittleTruncation, tol: f64) -> Result<PhiBalanceReport> {
    let phi = spec.big_phi.as_ref().ok_or_else(|| QrError::InvalidParams("no balance function supplied".into()))?;
    let states: BTreeSet<Vec<u32>> = truncation.states(spec)?.into_iter().collect();
    for s in &states {
        let lhs = phi.eval(s) * spec.phi0;
        for l in 0..spec.labels() {
            let mut up = s.clone();
            up[l] += 1;
            if !states.contains(&up) {
                continue;
            }
            let rhs = phi.eval(&up) * spec.service_rate(l, &up)?;
            if (lhs - rhs).abs() > tol * lhs.abs().max(rhs.abs()) {
                return Ok(PhiBalanceReport { balanced: false, witness: Some((s.clone(), l)) });
            }
        }
    }
    Ok(PhiBalanceReport { balanced: true, witness: None })
}

/// `Φ(s) Π_{ik} λ_{ik}^{s_{ik}}`.
pub fn whittle_product_form(spec: &WhittleSpec, lambda: &[f64], s: &[u32]) -> Result<f64> {
    let phi = spec.big_phi.as_ref().ok_or_else(|| QrError::InvalidParams("no balance function supplied".into()))?;
    Ok(phi.eval(s) * s.iter().zip(lambda).map(|(&c, l)| l.powi(c as i32)).product::<f64>())
}

/// Builds the network on a truncation. Arrivals leaving the truncation are dropped.
pub fn build_whittle_system(spec: &WhittleSpec, truncation: &WhittleTruncation) -> Result<QueueSystem> {
    spec.validate_routing()?;
    let states = truncation.states(spec)?;
    let set: BTreeSet<&Vec<u32>> = states.iter().collect();
    let d = spec.labels();
    let mut b = QueueSystemBuilder::new(spec.n);
    for s in &states {
        b.add_state(s.clone(), spec.counting(s))?;
    }
    for s in &states {
        for l in 0..d {
            let mut up = s.clone();
            up[l] += 1;
            let rate = spec.route(None, Some(l)) * spec.phi0;
            if rate > 0.0 && set.contains(&up) {
                b.add_edge(s.clone(), up, rate)?;
            }
        }
        for k in 0..d {
            if s[k] == 0 {
                continue;
            }
            let phi = spec.service_rate(k, s)?;
            if !(phi.is_finite() && phi > 0.0) {
                return Err(QrError::InvalidParams(format!("service rate {phi} of label {} in {s:?}", spec.label_name(k))));
            }
            let mut down = s.clone();
            down[k] -= 1;
            let out = spec.route(Some(k), None) * phi;
            if out > 0.0 {
                b.add_edge(s.clone(), down.clone(), out)?;
            }
            for l in 0..d {
                let r = spec.route(Some(k), Some(l)) * phi;
                if r <= 0.0 || l == k {
                    continue;
                }
                let mut moved = down.clone();
                moved[l] += 1;
                if !set.contains(&moved) {
                    return Err(QrError::InvalidParams(format!(
                        "internal move from {s:?} to {moved:?} leaves the truncation; truncate by class totals instead"
                    )));
                }
                b.add_edge(s.clone(), moved, r)?;
            }
        }
    }
    b.build()
}

/// Order-independent queue with one class per label and the same macrostate law.
///
/// Arrival rates are `λ_{ik} φ_0` and the rate function is
/// `μ(x) = φ_0 Σ_{ik: x_{ik} > 0} Φ(x - e_{ik}) / Φ(x)`.
pub fn matched_oi_spec(spec: &WhittleSpec) -> Result<OISpec> {
    let lambda = solve_traffic(spec)?;
    let phi = spec.big_phi.clone().ok_or_else(|| QrError::InvalidParams("no balance function supplied".into()))?;
    let phi0 = spec.phi0;
    let nu = lambda.iter().map(|l| l * phi0).collect();
    Ok(OISpec::new(nu, move |x| {
        let s = x.as_slice();
        let base = phi.eval(s);
        let mut total = 0.0;
        let mut prev = s.to_vec();
        for l in 0..s.len() {
            if s[l] > 0 {
                prev[l] -= 1;
                total += phi.eval(&prev) / base;
                prev[l] += 1;
            }
        }
        phi0 * total
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// `L1` distance between the two macrostate distributions on label matrices.
    pub l1: f64,
    pub states: usize,
    pub passes: bool,
}

/// Compares the controlled network with the controlled matched OI queue.
///
/// `gamma` is defined on class totals; its domain is the truncation. The OI
/// queue sees it through the class totals of its label counts.
pub fn check_equivalence(spec: &WhittleSpec, gamma: &BalanceFunction, tol: f64) -> Result<EquivalenceReport> {
    let trunc = WhittleTruncation::ClassTotals(gamma.domain().clone());
    let report = check_phi_balance(spec, &trunc, 1e-12)?;
    if !report.balanced {
        return Err(QrError::InvalidParams(format!(
            "service rates are not balanced at {:?}",
            report.witness.expect("witness")
        )));
    }
    let policy = policy_from_balance(gamma)?;
    let w_sys = build_whittle_system(spec, &trunc)?;
    let w_pi = solve_stationary(&apply_control(&w_sys, &policy.policy)?)?;

    let oi = matched_oi_spec(spec)?;
    let labels = trunc.as_ferrers(spec)?;
    let oi_sys = build_oi_system(&oi, &labels)?;
    let oi_ctrl = apply_state_control(&oi_sys, |s, l| policy.prob(&spec.counting(oi_sys.counting(s).as_slice()), spec.class_of(l)))?;
    let oi_pi = solve_stationary(&oi_ctrl)?;

    let mut oi_macro = vec![0.0; labels.len()];
    for s in 0..oi_sys.n_states() {
        oi_macro[labels.index_of(oi_sys.counting(s)).expect("label matrix")] += oi_pi.get(s);
    }
    // Anchor both at the empty state.
    let w_empty = w_pi.get(w_sys.empty_state());
    let oi_empty = oi_pi.get(oi_sys.empty_state());
    let mut l1 = 0.0;
    let mut z = 0.0;
    for s in 0..w_sys.n_states() {
        let k = labels.index_of(&Macrostate(w_sys.key(s).to_vec())).expect("same state space");
        let w = w_pi.get(s) / w_empty;
        l1 += (w - oi_macro[k] / oi_empty).abs();
        z += w;
    }
    let l1 = l1 / z;
    Ok(EquivalenceReport { l1, states: w_sys.n_states(), passes: l1 <= tol })
}

/// Serializable description of a network with built-in rate functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhittleConfig {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub phi0: f64,
    pub phi: ServiceRateConfig,
    #[serde(rename = "Phi", default)]
    pub big_phi: Option<PhiConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceRateConfig {
    Constant { c: f64 },
    PerLabelLinear { c: f64 },
    FromBalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiConfig {
    Unit,
    InverseFactorial,
}

impl WhittleConfig {
    pub fn into_spec(self) -> Result<WhittleSpec> {
        let phi = match self.phi {
            ServiceRateConfig::Constant { c } | ServiceRateConfig::PerLabelLinear { c } if !(c.is_finite() && c > 0.0) => {
                return Err(QrError::InvalidParams(format!("service constant {c} must be positive")))
            }
            ServiceRateConfig::Constant { c } => ServiceRate::Constant(c),
            ServiceRateConfig::PerLabelLinear { c } => ServiceRate::PerLabelLinear(c),
            ServiceRateConfig::FromBalance => ServiceRate::FromBalance,
        };
        let big_phi = self.big_phi.map(|p| match p {
            PhiConfig::Unit => PhiSpec::Unit,
            PhiConfig::InverseFactorial => PhiSpec::InverseFactorial,
        });
        let spec = WhittleSpec { n: self.n, m: self.m, p: self.p, phi0: self.phi0, phi, big_phi };
        spec.validate_routing()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<WhittleSpec> {
        let cfg: WhittleConfig = serde_json::from_str(text).map_err(|e| QrError::Parse(e.to_string()))?;
        if cfg.n.saturating_mul(cfg.m) > 64 {
            return Err(QrError::SizeCap(format!("{} x {} labels", cfg.n, cfg.m)));
        }
        cfg.into_spec()
    }
}

/// One class through `m` sites in series, constant service rate `c` at every site.
pub fn tandem(m: usize, phi0: f64, c: f64) -> WhittleSpec {
    let d = 1 + m;
    let mut p = vec![vec![0.0; d]; d];
    p[0][1] = 1.0;
    for k in 1..m {
        p[k][k + 1] = 1.0;
    }
    p[m][0] = 1.0;
    WhittleSpec { n: 1, m, p, phi0, phi: ServiceRate::Constant(c), big_phi: Some(PhiSpec::Unit) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p_out: f64, p_self: f64) -> WhittleSpec {
        WhittleSpec {
            n: 1,
            m: 1,
            p: vec![vec![0.0, 1.0], vec![p_out, p_self]],
            phi0: 1.0,
            phi: ServiceRate::Constant(1.0),
            big_phi: Some(PhiSpec::Unit),
        }
    }

    #[test]
    fn traffic_examples() {
        assert_eq!(solve_traffic(&tandem(2, 1.0, 1.0)).unwrap(), vec![1.0, 1.0]);
        assert_eq!(solve_traffic(&single(1.0, 0.0)).unwrap(), vec![1.0]);
        assert!((solve_traffic(&single(0.5, 0.5)).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn irreducibility_names_label() {
        let mut spec = tandem(2, 1.0, 1.0);
        spec.p[1] = vec![1.0, 0.0, 0.0];
        spec.p[2] = vec![0.0, 0.0, 1.0];
        let err = solve_traffic(&spec).unwrap_err();
        assert!(err.to_string().contains("(1,2)"), "{err}");
    }

    #[test]
    fn product_form_examples() {
        let spec = tandem(2, 1.0, 1.0);
        let lambda = solve_traffic(&spec).unwrap();
        assert_eq!(whittle_product_form(&spec, &lambda, &[0, 0]).unwrap(), 1.0);
        assert_eq!(whittle_product_form(&spec, &lambda, &[2, 1]).unwrap(), 1.0);
        let spec = single(0.5, 0.5);
        let lambda = solve_traffic(&spec).unwrap();
        assert!((whittle_product_form(&spec, &lambda, &[3]).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn phi_balance_examples() {
        let trunc = WhittleTruncation::Entrywise(vec![3, 3]);
        let mut spec = tandem(2, 2.0, 2.0);
        assert!(check_phi_balance(&spec, &trunc, 1e-12).unwrap().balanced);
        spec.phi = ServiceRate::PerLabelLinear(2.0);
        spec.big_phi = Some(PhiSpec::InverseFactorial);
        assert!(check_phi_balance(&spec, &trunc, 1e-12).unwrap().balanced);
        spec.phi = ServiceRate::Custom(Arc::new(|l, s| if l == 0 { 2.0 * s[0] as f64 } else { 1.0 }));
        let rep = check_phi_balance(&spec, &trunc, 1e-12).unwrap();
        assert!(!rep.balanced);
        assert_eq!(rep.witness, Some((vec![0, 0], 1)));
    }

    #[test]
    fn tandem_internal_move() {
        let spec = tandem(2, 1.0, 1.5);
        let trunc = WhittleTruncation::ClassTotals(FerrersSet::boxed(&[3]));
        let sys = build_whittle_system(&spec, &trunc).unwrap();
        let s = sys.index_of(&[1, 0]).unwrap();
        let t = sys.index_of(&[0, 1]).unwrap();
        assert_eq!(sys.rate(s, t), 1.5);
        assert!(build_whittle_system(&spec, &WhittleTruncation::Entrywise(vec![2, 2])).is_err());
    }

    #[test]
    fn config_parses() {
        let text = r#"{"n":1,"m":2,"P":[[0,1,0],[0,0,1],[1,0,0]],"phi0":1.0,"phi":{"kind":"constant","c":2.0},"Phi":"unit"}"#;
        let spec = WhittleConfig::from_json(text).unwrap();
        assert_eq!(spec.m, 2);
        let bad = r#"{"n":1,"m":2,"P":[[0,1,0],[0,0,1],[1,0,1]],"phi0":1.0,"phi":{"kind":"constant","c":2.0}}"#;
        assert!(WhittleConfig::from_json(bad).is_err());
    }
}
