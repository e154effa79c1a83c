use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::problem::{AdmissionProblem, PolicyTable};
use crate::balance::apply_state_control;
use crate::error::{QrError, Result};
use crate::qrcore::{solve_stationary, FerrersSet, TransitionKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpVariant {
    /// Stationary flows `η` on every edge with free admission on arrival edges.
    General,
    /// Balance function values with monotonicity and normalization rows.
    Balanced,
    /// Like `General` with the global balance rows replaced by `η(x,y) = η(y,x)`.
    ReversibleLocal,
}

impl LpVariant {
    pub const ALL: [LpVariant; 3] = [LpVariant::General, LpVariant::Balanced, LpVariant::ReversibleLocal];

    pub fn name(self) -> &'static str {
        match self {
            LpVariant::General => "general",
            LpVariant::Balanced => "balanced",
            LpVariant::ReversibleLocal => "reversible_local",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        LpVariant::ALL
            .into_iter()
            .find(|v| v.name() == text)
            .ok_or_else(|| QrError::Parse(format!("unknown LP variant {text:?}")))
    }
}

/// Name of the variable holding the stationary probability of microstate `s`.
pub fn pi_var(s: usize) -> String {
    format!("p{s}")
}

/// Name of the variable holding the stationary flow on edge `k`.
pub fn eta_var(k: usize) -> String {
    format!("e{k}")
}

/// Name of the variable holding the balance function at the `k`-th macrostate of the image.
pub fn gamma_var(k: usize) -> String {
    format!("g{k}")
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn write_expr(out: &mut String, terms: &[(f64, String)]) {
    if terms.is_empty() {
        out.push_str(" 0 p0");
        return;
    }
    for (j, (c, v)) in terms.iter().enumerate() {
        if j == 0 {
            if *c < 0.0 {
                let _ = write!(out, " - {} {v}", num(-c));
            } else {
                let _ = write!(out, " {} {v}", num(*c));
            }
        } else if *c < 0.0 {
            let _ = write!(out, " - {} {v}", num(-c));
        } else {
            let _ = write!(out, " + {} {v}", num(*c));
        }
    }
}

struct Doc {
    text: String,
}

impl Doc {
    fn new(title: &str) -> Self {
        Doc { text: format!("\\ {title}\n") }
    }

    fn comment(&mut self, line: &str) {
        let _ = writeln!(self.text, "\\ {line}");
    }

    fn objective(&mut self, terms: &[(f64, String)]) {
        self.text.push_str("Maximize\n obj:");
        write_expr(&mut self.text, terms);
        self.text.push_str("\nSubject To\n");
    }

    fn row(&mut self, name: &str, terms: &[(f64, String)], op: &str, rhs: f64) {
        let _ = write!(self.text, " {name}:");
        write_expr(&mut self.text, terms);
        let _ = writeln!(self.text, " {op} {}", num(rhs));
    }

    fn finish(mut self, bounds: &[String]) -> String {
        self.text.push_str("Bounds\n");
        for b in bounds {
            let _ = writeln!(self.text, " {b}");
        }
        self.text.push_str("End\n");
        self.text
    }
}

/// Exports the admission problem as a linear program in CPLEX LP format.
pub fn export_lp(problem: &AdmissionProblem, variant: LpVariant) -> Result<String> {
    match variant {
        LpVariant::Balanced => Ok(export_balanced(problem)),
        LpVariant::General => Ok(export_flows(problem, false)),
        LpVariant::ReversibleLocal => {
            let sys = problem.system();
            if sys.n_states() != sys.image().len() {
                return Err(QrError::Unsupported(
                    "the reversible_local variant needs the identity counting map".into(),
                ));
            }
            Ok(export_flows(problem, true))
        }
    }
}

fn export_flows(problem: &AdmissionProblem, local: bool) -> String {
    let sys = problem.system();
    let r = problem.rewards();
    let mut doc = Doc::new(if local { "admission control, local balance" } else { "admission control, stationary flows" });
    for s in 0..sys.n_states() {
        doc.comment(&format!("{} = state {:?}", pi_var(s), sys.key(s)));
    }
    for (k, e) in sys.edges().iter().enumerate() {
        doc.comment(&format!("{} = flow {:?} -> {:?} ({})", eta_var(k), sys.key(e.from), sys.key(e.to), e.kind));
    }
    let mut obj: Vec<(f64, String)> = Vec::new();
    for s in 0..sys.n_states() {
        if r.rcont[s] != 0.0 {
            obj.push((r.rcont[s], pi_var(s)));
        }
    }
    for (k, &v) in r.rdisc.iter().enumerate() {
        if v != 0.0 {
            obj.push((v, eta_var(k)));
        }
    }
    doc.objective(&obj);
    if local {
        for (k, e) in sys.edges().iter().enumerate() {
            match sys.edges().iter().position(|f| f.from == e.to && f.to == e.from) {
                Some(j) if j > k => doc.row(&format!("sym{k}"), &[(1.0, eta_var(k)), (-1.0, eta_var(j))], "=", 0.0),
                Some(_) => {}
                None => doc.row(&format!("sym{k}"), &[(1.0, eta_var(k))], "=", 0.0),
            }
        }
    } else {
        for s in 0..sys.n_states() {
            let mut terms: Vec<(f64, String)> = Vec::new();
            for (k, e) in sys.out_edges(s) {
                if e.to != s {
                    terms.push((1.0, eta_var(k)));
                }
            }
            for (k, e) in sys.in_edges(s) {
                if e.from != s {
                    terms.push((-1.0, eta_var(k)));
                }
            }
            doc.row(&format!("flow{s}"), &terms, "=", 0.0);
        }
    }
    let norm: Vec<(f64, String)> = (0..sys.n_states()).map(|s| (1.0, pi_var(s))).collect();
    doc.row("norm", &norm, "=", 1.0);
    for (k, e) in sys.edges().iter().enumerate() {
        let terms = [(1.0, eta_var(k)), (-e.rate, pi_var(e.from))];
        match e.kind {
            TransitionKind::Arrival(_) => doc.row(&format!("adm{k}"), &terms, "<=", 0.0),
            _ => doc.row(&format!("rate{k}"), &terms, "=", 0.0),
        }
    }
    // one admission probability per state and class shared by all its arrival edges
    for s in 0..sys.n_states() {
        let mut first: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for (k, e) in sys.out_edges(s) {
            if let TransitionKind::Arrival(i) = e.kind {
                match first.get(&i) {
                    None => {
                        first.insert(i, (k, e.rate));
                    }
                    Some(&(k0, q0)) => {
                        doc.row(&format!("tie{k}"), &[(q0, eta_var(k)), (-e.rate, eta_var(k0))], "=", 0.0);
                    }
                }
            }
        }
    }
    let mut bounds: Vec<String> = (0..sys.n_states()).map(|s| format!("0 <= {} <= 1", pi_var(s))).collect();
    bounds.extend((0..sys.edges().len()).map(|k| format!("{} >= 0", eta_var(k))));
    doc.finish(&bounds)
}

/// Coefficients `c(x)` and masses `w(x)` of the balanced objective over the image.
pub(crate) fn balanced_terms(problem: &AdmissionProblem) -> (Vec<f64>, Vec<f64>) {
    let sys = problem.system();
    let r = problem.rewards();
    let pi = problem.base_distribution();
    let d = sys.image().len();
    let (mut c, mut w) = (vec![0.0; d], vec![0.0; d]);
    for s in 0..sys.n_states() {
        let x = sys.macro_index(s);
        w[x] += pi.get(s);
        c[x] += pi.get(s) * r.rcont[s];
    }
    for (k, e) in sys.edges().iter().enumerate() {
        let owner = match e.kind {
            TransitionKind::Arrival(_) => sys.macro_index(e.to),
            _ => sys.macro_index(e.from),
        };
        c[owner] += pi.get(e.from) * e.rate * r.rdisc[k];
    }
    (c, w)
}

fn export_balanced(problem: &AdmissionProblem) -> String {
    let sys = problem.system();
    let domain: &FerrersSet = sys.image();
    let (c, w) = balanced_terms(problem);
    let mut doc = Doc::new("admission control, balanced policies");
    for (k, x) in domain.iter().enumerate() {
        doc.comment(&format!("{} = balance function at {x}", gamma_var(k)));
    }
    let obj: Vec<(f64, String)> =
        c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (*v, gamma_var(k))).collect();
    doc.objective(&obj);
    for (k, x) in domain.iter().enumerate() {
        for i in 0..domain.dim() {
            if let Some(j) = domain.index_of(&x.plus(i)) {
                doc.row(&format!("mono{k}_{}", i + 1), &[(1.0, gamma_var(k)), (-1.0, gamma_var(j))], ">=", 0.0);
            }
        }
    }
    let norm: Vec<(f64, String)> = w.iter().enumerate().map(|(k, v)| (*v, gamma_var(k))).collect();
    doc.row("norm", &norm, "=", 1.0);
    let bounds: Vec<String> = (0..domain.len()).map(|k| format!("{} >= 0", gamma_var(k))).collect();
    doc.finish(&bounds)
}

/// Values of the `General` variables induced by a policy: its stationary distribution and flows.
pub fn flow_solution(problem: &AdmissionProblem, policy: &PolicyTable) -> Result<BTreeMap<String, f64>> {
    let sys = problem.system();
    let controlled = apply_state_control(sys, |s, i| policy.prob(s, i))?;
    let pi = solve_stationary(&controlled)?;
    let mut out = BTreeMap::new();
    for s in 0..sys.n_states() {
        out.insert(pi_var(s), pi.get(s));
    }
    for (k, e) in sys.edges().iter().enumerate() {
        let rate = match e.kind {
            TransitionKind::Arrival(i) => e.rate * policy.prob(e.from, i),
            _ => e.rate,
        };
        out.insert(eta_var(k), pi.get(e.from) * rate);
    }
    Ok(out)
}

/// Values of the `Balanced` variables for the policy that confines the system to `mask`.
pub fn mask_solution(problem: &AdmissionProblem, mask: &FerrersSet) -> BTreeMap<String, f64> {
    let domain = problem.system().image();
    let (_, w) = balanced_terms(problem);
    let mass: f64 = domain.iter().zip(&w).filter(|(x, _)| mask.contains(x)).map(|(_, v)| v).sum();
    domain
        .iter()
        .enumerate()
        .map(|(k, x)| (gamma_var(k), if mask.contains(x) { 1.0 / mass } else { 0.0 }))
        .collect()
}
