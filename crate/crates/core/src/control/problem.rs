use serde::Serialize;

use crate::balance::{apply_state_control, MacroPolicy};
use crate::error::{QrError, Result};
use crate::qrcore::{
    check_quasi_reversibility, solve_stationary, validate_assumption1, FerrersSet, Macrostate, QueueSystem,
    QueueSystemBuilder, StationaryMeasure, TransitionKind,
};

/// Occupation reward rate per microstate and transition reward per kernel edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardSpec {
    pub rcont: Vec<f64>,
    /// Indexed like `sys.edges()`.
    pub rdisc: Vec<f64>,
}

impl RewardSpec {
    pub fn from_fns(sys: &QueueSystem, rcont: impl Fn(usize) -> f64, rdisc: impl Fn(usize, usize) -> f64) -> Self {
        RewardSpec {
            rcont: (0..sys.n_states()).map(rcont).collect(),
            rdisc: sys.edges().iter().map(|e| rdisc(e.from, e.to)).collect(),
        }
    }

    pub fn zero(sys: &QueueSystem) -> Self {
        RewardSpec { rcont: vec![0.0; sys.n_states()], rdisc: vec![0.0; sys.edges().len()] }
    }

    pub fn negated(&self) -> Self {
        RewardSpec {
            rcont: self.rcont.iter().map(|v| -v).collect(),
            rdisc: self.rdisc.iter().map(|v| -v).collect(),
        }
    }
}

/// A quasi-reversible queueing system with rewards.
#[derive(Debug, Clone)]
pub struct AdmissionProblem {
    sys: QueueSystem,
    rewards: RewardSpec,
    /// Stationary distribution of the uncontrolled system.
    base: StationaryMeasure,
}

impl AdmissionProblem {
    pub fn new(sys: QueueSystem, rewards: RewardSpec) -> Result<Self> {
        if rewards.rcont.len() != sys.n_states() || rewards.rdisc.len() != sys.edges().len() {
            return Err(QrError::DomainMismatch("reward arrays do not match the system".into()));
        }
        if let Some(v) = rewards.rcont.iter().chain(&rewards.rdisc).find(|v| !v.is_finite()) {
            return Err(QrError::InvalidParams(format!("reward {v}")));
        }
        let report = validate_assumption1(&sys);
        if !report.passes {
            let v = &report.violations[0];
            return Err(QrError::Assumption(format!(
                "item {} fails at state {:?}",
                v.item,
                sys.key(v.witness)
            )));
        }
        let base = solve_stationary(&sys)?;
        let qr = check_quasi_reversibility(&sys, &base, 1e-9)?;
        if !qr.quasi_reversible {
            return Err(QrError::Assumption(format!(
                "system is not quasi-reversible (residual {:e})",
                qr.max_residual
            )));
        }
        Ok(AdmissionProblem { sys, rewards, base })
    }

    pub fn system(&self) -> &QueueSystem {
        &self.sys
    }

    pub fn rewards(&self) -> &RewardSpec {
        &self.rewards
    }

    pub fn base_distribution(&self) -> &StationaryMeasure {
        &self.base
    }

    /// Same system with negated rewards.
    pub fn negated(&self) -> Self {
        AdmissionProblem { sys: self.sys.clone(), rewards: self.rewards.negated(), base: self.base.clone() }
    }
}

/// Admission probabilities per microstate and class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyTable {
    pub probs: Vec<Vec<f64>>,
    pub deterministic: bool,
}

impl PolicyTable {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(p) = probs.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(QrError::InvalidParams(format!("probability {p}")));
        }
        let deterministic = probs.iter().flatten().all(|&p| p == 0.0 || p == 1.0);
        Ok(PolicyTable { probs, deterministic })
    }

    pub fn constant(sys: &QueueSystem, p: f64) -> Result<Self> {
        Self::new(vec![vec![p; sys.n_classes()]; sys.n_states()])
    }

    pub fn admit_all(sys: &QueueSystem) -> Self {
        Self::constant(sys, 1.0).expect("valid")
    }

    pub fn reject_all(sys: &QueueSystem) -> Self {
        Self::constant(sys, 0.0).expect("valid")
    }

    /// Lifts a macrostate policy defined on `|S|`.
    pub fn from_macro(sys: &QueueSystem, policy: &MacroPolicy) -> Result<Self> {
        if policy.domain() != sys.image() {
            return Err(QrError::DomainMismatch("policy domain differs from the image of the counting map".into()));
        }
        Self::new((0..sys.n_states()).map(|s| (0..sys.n_classes()).map(|i| policy.prob_at(sys.macro_index(s), i)).collect()).collect())
    }

    pub fn prob(&self, s: usize, i: usize) -> f64 {
        self.probs[s][i]
    }
}

/// `Σ_s Π(s) rcont(s) + Σ_{edges} Π(s) q_γ(s,t) rdisc(s,t)` for the controlled system.
pub fn gain(problem: &AdmissionProblem, policy: &PolicyTable) -> Result<f64> {
    let sys = problem.system();
    if policy.probs.len() != sys.n_states() || policy.probs.iter().any(|r| r.len() != sys.n_classes()) {
        return Err(QrError::DomainMismatch("policy table does not match the system".into()));
    }
    let controlled = apply_state_control(sys, |s, i| policy.prob(s, i))?;
    let pi = solve_stationary(&controlled)?;
    Ok(gain_with(problem, policy, &pi))
}

fn gain_with(problem: &AdmissionProblem, policy: &PolicyTable, pi: &StationaryMeasure) -> f64 {
    let sys = problem.system();
    let r = problem.rewards();
    let mut g: f64 = (0..sys.n_states()).map(|s| pi.get(s) * r.rcont[s]).sum();
    for (k, e) in sys.edges().iter().enumerate() {
        let rate = match e.kind {
            TransitionKind::Arrival(i) => e.rate * policy.prob(e.from, i),
            _ => e.rate,
        };
        g += pi.get(e.from) * rate * r.rdisc[k];
    }
    g
}

/// Identifier of one of the built-in two-class examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyId {
    /// Reward on admissions along a fixed staircase path.
    PathReward,
    /// Reward rate 1 in the corner state `(5, 0)`.
    CornerReward,
    /// Holding cost 1 per customer, admission rewards 3 and 6.
    Realistic,
}

impl ToyId {
    pub const ALL: [ToyId; 3] = [ToyId::PathReward, ToyId::CornerReward, ToyId::Realistic];

    pub fn name(self) -> &'static str {
        match self {
            ToyId::PathReward => "path_reward",
            ToyId::CornerReward => "corner_reward",
            ToyId::Realistic => "realistic",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        ToyId::ALL
            .into_iter()
            .find(|t| t.name() == text)
            .ok_or_else(|| QrError::Parse(format!("unknown example {text:?}")))
    }
}

/// Macrostates of the path that carries the rewards of [`ToyId::PathReward`].
pub const REWARD_PATH: [[u32; 2]; 11] =
    [[0, 0], [1, 0], [2, 0], [2, 1], [3, 1], [3, 2], [3, 3], [3, 4], [4, 4], [4, 5], [5, 5]];

/// Two-class processor-sharing queue on `[0,5]^2` with unit total service rate.
pub fn processor_sharing(nu: [f64; 2], cap: u32) -> Result<QueueSystem> {
    let dom = FerrersSet::boxed(&[cap, cap]);
    let mut b = QueueSystemBuilder::new(2);
    for x in dom.iter() {
        b.add_state(x.0.clone(), x.clone())?;
    }
    for x in dom.iter() {
        let total = x.total() as f64;
        for i in 0..2 {
            let up = x.plus(i);
            if dom.contains(&up) {
                b.add_edge(x.0.clone(), up.0, nu[i])?;
            }
            if let Some(down) = x.minus(i) {
                b.add_edge(x.0.clone(), down.0, x.get(i) as f64 / total)?;
            }
        }
    }
    b.build()
}

/// Builds one of the two-class examples with arrival rates `(nu1, nu2)`.
pub fn toy_example(id: ToyId, nu1: f64, nu2: f64) -> Result<AdmissionProblem> {
    if !(nu1 > 0.0 && nu2 > 0.0 && nu1.is_finite() && nu2.is_finite()) {
        return Err(QrError::InvalidParams(format!("arrival rates ({nu1}, {nu2}) must be positive")));
    }
    let sys = processor_sharing([nu1, nu2], 5)?;
    let x = |s: usize| sys.counting(s).clone();
    let rewards = match id {
        ToyId::PathReward => {
            let on_path = |m: &Macrostate| REWARD_PATH.iter().any(|p| p[..] == m.0[..]);
            RewardSpec::from_fns(&sys, |_| 0.0, |s, t| {
                let (a, b) = (x(s), x(t));
                if on_path(&a) && on_path(&b) && a.leq(&b) && a != b {
                    1.0
                } else {
                    0.0
                }
            })
        }
        ToyId::CornerReward => RewardSpec::from_fns(&sys, |s| if x(s).0 == [5, 0] { 1.0 } else { 0.0 }, |_, _| 0.0),
        ToyId::Realistic => RewardSpec::from_fns(&sys, |s| -(x(s).total() as f64), |s, t| {
            match (x(t).get(0) as i64 - x(s).get(0) as i64, x(t).get(1) as i64 - x(s).get(1) as i64) {
                (1, 0) => 3.0,
                (0, 1) => 6.0,
                _ => 0.0,
            }
        }),
    };
    AdmissionProblem::new(sys, rewards)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reject_all_and_zero_rewards() {
        let p = toy_example(ToyId::PathReward, 0.1, 0.1).unwrap();
        assert_eq!(gain(&p, &PolicyTable::reject_all(p.system())).unwrap(), 0.0);
        let z = AdmissionProblem::new(p.system().clone(), RewardSpec::zero(p.system())).unwrap();
        assert_eq!(gain(&z, &PolicyTable::constant(z.system(), 0.7).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn corner_gain_is_corner_probability() {
        let p = toy_example(ToyId::CornerReward, 0.1, 0.1).unwrap();
        let g = gain(&p, &PolicyTable::admit_all(p.system())).unwrap();
        let corner = p.system().index_of(&[5, 0]).unwrap();
        assert!((g - p.base_distribution().get(corner)).abs() < 1e-15);
    }

    #[test]
    fn toy_ids_round_trip() {
        for t in ToyId::ALL {
            assert_eq!(ToyId::parse(t.name()).unwrap(), t);
        }
        assert!(ToyId::parse("nope").is_err());
        assert!(toy_example(ToyId::Realistic, 0.0, 1.0).is_err());
    }
}
