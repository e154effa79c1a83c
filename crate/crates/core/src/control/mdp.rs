use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::problem::{gain, AdmissionProblem, PolicyTable};
use crate::error::{QrError, Result};
use crate::qrcore::TransitionKind;

const MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalPolicy {
    pub policy: PolicyTable,
    pub gain: f64,
    /// Largest Bellman optimality residual, in reward per unit time.
    pub bellman_residual: f64,
    pub iterations: usize,
}

/// Uniformized average-reward MDP whose action at each state is a set of admitted classes.
struct Mdp<'a> {
    problem: &'a AdmissionProblem,
    lambda: f64,
    /// Bits of the classes with at least one arrival edge, per state.
    feasible: Vec<u32>,
}

impl<'a> Mdp<'a> {
    fn new(problem: &'a AdmissionProblem) -> Self {
        let sys = problem.system();
        let mut feasible = vec![0u32; sys.n_states()];
        let mut max_out: f64 = 0.0;
        for s in 0..sys.n_states() {
            let mut out = 0.0;
            for (_, e) in sys.out_edges(s) {
                if e.to != s {
                    out += e.rate;
                }
                if let TransitionKind::Arrival(i) = e.kind {
                    feasible[s] |= 1 << i;
                }
            }
            max_out = max_out.max(out);
        }
        let lambda = if max_out > 0.0 { 1.05 * max_out } else { 1.0 };
        Mdp { problem, lambda, feasible }
    }

    fn actions(&self, s: usize) -> impl Iterator<Item = u32> + '_ {
        let f = self.feasible[s];
        (0..=f).filter(move |a| a & !f == 0)
    }

    /// One-step reward and transitions `(target, probability)` of the uniformized chain.
    fn step(&self, s: usize, action: u32) -> (f64, Vec<(usize, f64)>) {
        let sys = self.problem.system();
        let r = self.problem.rewards();
        let mut reward = r.rcont[s];
        let mut moves = Vec::new();
        let mut stay = 1.0;
        for (k, e) in sys.out_edges(s) {
            let on = match e.kind {
                TransitionKind::Arrival(i) => action >> i & 1 == 1,
                _ => true,
            };
            if !on {
                continue;
            }
            reward += e.rate * r.rdisc[k];
            if e.to != s {
                let p = e.rate / self.lambda;
                moves.push((e.to, p));
                stay -= p;
            }
        }
        moves.push((s, stay));
        (reward / self.lambda, moves)
    }

    fn q_value(&self, s: usize, action: u32, h: &[f64]) -> f64 {
        let (r, moves) = self.step(s, action);
        r + moves.iter().map(|&(t, p)| p * h[t]).sum::<f64>()
    }

    /// Solves `g + h(s) = r(s) + Σ_t P(s,t) h(t)` with `h(empty) = 0`.
    fn evaluate(&self, policy: &[u32]) -> Result<(f64, Vec<f64>)> {
        let sys = self.problem.system();
        let m = sys.n_states();
        let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
        let mut b = DVector::<f64>::zeros(m + 1);
        for s in 0..m {
            let (r, moves) = self.step(s, policy[s]);
            a[(s, s)] += 1.0;
            a[(s, m)] = 1.0;
            for (t, p) in moves {
                a[(s, t)] -= p;
            }
            b[s] = r;
        }
        a[(m, sys.empty_state())] = 1.0;
        let x = a.lu().solve(&b).ok_or_else(|| QrError::Solver("policy evaluation system is singular".into()))?;
        Ok((x[m], x.as_slice()[..m].to_vec()))
    }
}

/// Howard policy iteration on the uniformized MDP, starting from reject-all.
pub fn optimal_policy(problem: &AdmissionProblem) -> Result<OptimalPolicy> {
    let mdp = Mdp::new(problem);
    let sys = problem.system();
    let m = sys.n_states();
    let mut policy = vec![0u32; m];
    for it in 1..=MAX_ITERATIONS {
        let (g, h) = mdp.evaluate(&policy)?;
        let scale = h.iter().fold(g.abs(), |acc, v| acc.max(v.abs())).max(1e-300);
        let mut changed = false;
        for s in 0..m {
            let current = mdp.q_value(s, policy[s], &h);
            let mut best = (current, policy[s]);
            for a in mdp.actions(s) {
                let v = mdp.q_value(s, a, &h);
                if v > best.0 + 1e-12 * scale {
                    best = (v, a);
                }
            }
            if best.1 != policy[s] {
                policy[s] = best.1;
                changed = true;
            }
        }
        if !changed {
            let mut residual: f64 = 0.0;
            for s in 0..m {
                let best = mdp.actions(s).map(|a| mdp.q_value(s, a, &h)).fold(f64::NEG_INFINITY, f64::max);
                residual = residual.max((best - g - h[s]).abs());
            }
            let residual = residual * mdp.lambda;
            if residual >= 1e-9 {
                return Err(QrError::PolicyIteration(format!("Bellman residual {residual:e} after convergence")));
            }
            let probs =
                policy.iter().map(|&a| (0..sys.n_classes()).map(|i| (a >> i & 1) as f64).collect()).collect();
            let table = PolicyTable::new(probs)?;
            return Ok(OptimalPolicy { policy: table, gain: g * mdp.lambda, bellman_residual: residual, iterations: it });
        }
    }
    Err(QrError::PolicyIteration(format!("no convergence after {MAX_ITERATIONS} iterations")))
}

/// Gain of the worst policy, obtained by maximizing the negated rewards.
pub fn worst_gain(problem: &AdmissionProblem) -> Result<f64> {
    Ok(-optimal_policy(&problem.negated())?.gain)
}

/// Solves the stationary distribution of the returned optimal policy and recomputes its gain.
pub fn certify_gain(problem: &AdmissionProblem, opt: &OptimalPolicy) -> Result<f64> {
    gain(problem, &opt.policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{toy_example, RewardSpec, ToyId};
    use crate::qrcore::{Macrostate, QueueSystemBuilder};

    #[test]
    fn zero_rewards_give_zero_gain() {
        let p = toy_example(ToyId::PathReward, 0.1, 0.1).unwrap();
        let z = AdmissionProblem::new(p.system().clone(), RewardSpec::zero(p.system())).unwrap();
        let opt = optimal_policy(&z).unwrap();
        assert_eq!(opt.gain, 0.0);
    }

    #[test]
    fn mm15_threshold_matches_brute_force() {
        let mut b = QueueSystemBuilder::new(1);
        for k in 0..=5u32 {
            b.add_state(vec![k], Macrostate(vec![k])).unwrap();
        }
        for k in 0..5u32 {
            b.add_edge(vec![k], vec![k + 1], 1.0).unwrap();
            b.add_edge(vec![k + 1], vec![k], 1.0).unwrap();
        }
        let sys = b.build().unwrap();
        let rewards = RewardSpec::from_fns(&sys, |s| -(s as f64), |s, t| if t > s { 3.0 } else { 0.0 });
        let p = AdmissionProblem::new(sys, rewards).unwrap();
        let opt = optimal_policy(&p).unwrap();
        let mut best = f64::NEG_INFINITY;
        for bits in 0..32u32 {
            let probs = (0..6).map(|s| vec![if s < 5 && bits >> s & 1 == 1 { 1.0 } else { 0.0 }]).collect();
            best = best.max(gain(&p, &PolicyTable::new(probs).unwrap()).unwrap());
        }
        assert!((opt.gain - best).abs() < 1e-12, "{} vs {best}", opt.gain);
        assert!((certify_gain(&p, &opt).unwrap() - opt.gain).abs() < 1e-12);
    }
}
