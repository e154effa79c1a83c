use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::balance::{ThetaFamily, ThetaParam};
use crate::error::{QrError, Result};
use crate::oiqueue::RedundancySpec;
use crate::simenv::{stream_rng, EnvState, RedundancyEnv};

/// Probability that the policy admits the arriving customer of `state`.
pub fn policy_probs(param: &ThetaParam, state: &EnvState) -> f64 {
    let x = state.word.counts(param.n_classes());
    param.admit_prob(&state.word.key(), &x, state.incoming_class)
}

/// One decision epoch: the state, the action taken and the reward until the next arrival.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub state: EnvState,
    pub admit: bool,
    pub reward: f64,
}

/// `C̄ + Ē` with `C̄ = Σ (R - R̄) ∇log Γ(S) / (N - 1)` and `Ē = Σ R ∇log π(S, I, A) / N`.
///
/// Parameters of grown families must already exist for every state of the batch.
pub fn sage_gradient_estimate(batch: &[Transition], param: &ThetaParam) -> Result<Vec<f64>> {
    if !param.is_balanced() {
        return Err(QrError::Unsupported("the score-aware estimator needs a balance function".into()));
    }
    let n = batch.len();
    if n < 2 {
        return Err(QrError::InvalidParams(format!("batch of {n} transitions, need at least 2")));
    }
    let r_bar = batch.iter().map(|t| t.reward).sum::<f64>() / n as f64;
    let mut g = vec![0.0; param.dim()];
    for t in batch {
        let x = t.state.word.counts(param.n_classes());
        let c = (t.reward - r_bar) / (n - 1) as f64;
        if c != 0.0 {
            for (k, v) in param.grad_log_gamma_sparse(&x)? {
                g[k] += c * v;
            }
        }
        let e = t.reward / n as f64;
        if e != 0.0 {
            for (k, v) in param.grad_log_pi_sparse(&t.state.word.key(), &x, t.state.incoming_class, t.admit)? {
                g[k] += e * v;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SageConfig {
    /// Decision epochs between parameter updates.
    pub batch: usize,
    pub step: f64,
    /// Initial value of every parameter; the family default when absent.
    #[serde(default)]
    pub theta0: Option<f64>,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig { batch: 100, step: 0.1, theta0: None }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(QrError::InvalidParams("SAGE batch must be at least 2".into()));
        }
        check_step("step", self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcConfig {
    pub step_theta: f64,
    pub step_rbar: f64,
    pub step_v: f64,
    #[serde(default)]
    pub theta0: Option<f64>,
}

impl Default for AcConfig {
    fn default() -> Self {
        AcConfig { step_theta: 1e-3, step_rbar: 1e-2, step_v: 1e-2, theta0: None }
    }
}

impl AcConfig {
    pub fn validate(&self) -> Result<()> {
        check_step("step_theta", self.step_theta)?;
        check_step("step_rbar", self.step_rbar)?;
        check_step("step_v", self.step_v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QConfig {
    /// Decision epochs between exploration-rate updates.
    pub batch: usize,
    pub step_rbar: f64,
    pub step_q: f64,
    pub eps0: f64,
    pub eps_decrement: f64,
    pub eps_floor: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig { batch: 100, step_rbar: 1e-2, step_q: 1e-2, eps0: 0.1, eps_decrement: 2e-5, eps_floor: 1e-4 }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(QrError::InvalidParams("Q-learning batch must be at least 1".into()));
        }
        check_step("step_rbar", self.step_rbar)?;
        check_step("step_q", self.step_q)?;
        if !(0.0..=1.0).contains(&self.eps0)
            || !(0.0..=1.0).contains(&self.eps_floor)
            || self.eps_floor > self.eps0
            || !(self.eps_decrement >= 0.0)
        {
            return Err(QrError::InvalidParams("exploration rates must satisfy 0 ≤ floor ≤ eps0 ≤ 1".into()));
        }
        Ok(())
    }

    /// `ε_m`, from `ε_{m+1} = max(floor, ε_m - decrement)`.
    pub fn epsilon(&self, m: u64) -> f64 {
        // snap to the floor once the exact sequence would reach it, despite rounding
        let to_floor = (self.eps0 - self.eps_floor) / self.eps_decrement;
        if m as f64 >= to_floor - 1e-9 {
            return self.eps_floor;
        }
        (self.eps0 - self.eps_decrement * m as f64).max(self.eps_floor)
    }
}

fn check_step(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(QrError::InvalidParams(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// Environment, seed and logging shared by the three learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub env: RedundancySpec,
    pub seed: u64,
    /// Stream of the seed used by this run, so that replications are independent.
    #[serde(default)]
    pub stream: u64,
    pub total_steps: u64,
    /// Fixed distance between records; when absent, every step up to 1000 and then
    /// every `10^(d-2)` steps between `10^d` and `10^(d+1)`.
    #[serde(default)]
    pub record_stride: Option<u64>,
}

impl RunSpec {
    fn records_at(&self, t: u64) -> bool {
        match self.record_stride {
            Some(k) => t.is_multiple_of(k.max(1)),
            None => t.is_multiple_of(decade_stride(t)),
        }
    }
}

/// `max(1, 10^(floor(log10 t) - 2))`.
pub fn decade_stride(t: u64) -> u64 {
    let mut d = 0u32;
    let mut v = t;
    while v >= 10 {
        v /= 10;
        d += 1;
    }
    10u64.pow(d.saturating_sub(2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub step: u64,
    /// Cumulative mean reward per decision epoch.
    pub mean_reward: f64,
    /// Cumulative fraction of admitted arrivals per class.
    pub admit_rate: Vec<f64>,
    pub theta_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub family: Option<ThetaFamily>,
    pub seed: u64,
    pub stream: u64,
    pub steps: u64,
    pub final_mean_reward: f64,
    pub final_theta_digest: u64,
    pub table_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    /// CSV with header `step,mean_reward,admit_rate_class_1..n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.records.first().map_or(0, |r| r.admit_rate.len());
        write!(w, "step,mean_reward")?;
        for i in 1..=n {
            write!(w, ",admit_rate_class_{i}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(w, "{},{}", r.step, r.mean_reward)?;
            for a in &r.admit_rate {
                write!(w, ",{a}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Record at exactly `step`, if any.
    pub fn at(&self, step: u64) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.step == step)
    }
}

/// Running statistics shared by the learners.
struct Tracker {
    reward_sum: f64,
    arrivals: Vec<u64>,
    admitted: Vec<u64>,
    records: Vec<RunRecord>,
}

impl Tracker {
    fn new(n: usize) -> Self {
        Tracker { reward_sum: 0.0, arrivals: vec![0; n], admitted: vec![0; n], records: Vec::new() }
    }

    fn observe(&mut self, class: usize, admit: bool, reward: f64) {
        self.reward_sum += reward;
        self.arrivals[class] += 1;
        self.admitted[class] += admit as u64;
    }

    fn record(&mut self, step: u64, digest: u64) {
        let admit_rate = self
            .arrivals
            .iter()
            .zip(&self.admitted)
            .map(|(&a, &b)| if a == 0 { 0.0 } else { b as f64 / a as f64 })
            .collect();
        self.records.push(RunRecord { step, mean_reward: self.reward_sum / step as f64, admit_rate, theta_digest: digest });
    }

    fn finish(self, run: &RunSpec, algorithm: &str, family: Option<ThetaFamily>, digest: u64, table_size: usize) -> RunLog {
        let final_mean_reward = if run.total_steps == 0 { 0.0 } else { self.reward_sum / run.total_steps as f64 };
        RunLog {
            records: self.records,
            summary: RunSummary {
                algorithm: algorithm.to_string(),
                family,
                seed: run.seed,
                stream: run.stream,
                steps: run.total_steps,
                final_mean_reward,
                final_theta_digest: digest,
                table_size,
            },
        }
    }
}

fn initial_param(family: ThetaFamily, n: usize, theta0: Option<f64>) -> ThetaParam {
    match theta0 {
        Some(v) => ThetaParam::with_init(family, n, v),
        None => ThetaParam::new(family, n),
    }
}

fn materialize(param: &mut ThetaParam, state: &EnvState) {
    param.materialize(&state.word.key(), &state.word.counts(param.n_classes()));
}

/// Policy gradient with the score-aware estimator, updating after every batch.
pub fn run_sage(run: &RunSpec, family: ThetaFamily, cfg: &SageConfig) -> Result<RunLog> {
    cfg.validate()?;
    if family == ThetaFamily::Imbalanced {
        return Err(QrError::Unsupported("the score-aware estimator needs a balanced family".into()));
    }
    let mut env = RedundancyEnv::new(run.env.clone(), run.seed, run.stream)?;
    let mut rng = stream_rng(run.seed ^ 0x5a6e, run.stream);
    let n = run.env.n_classes();
    let mut param = initial_param(family, n, cfg.theta0);
    let mut tracker = Tracker::new(n);
    let mut batch = Vec::with_capacity(cfg.batch);
    for t in 1..=run.total_steps {
        let state = env.state().clone();
        materialize(&mut param, &state);
        let admit = rng.random::<f64>() < policy_probs(&param, &state);
        let out = env.step(admit);
        tracker.observe(state.incoming_class, admit, out.reward);
        batch.push(Transition { state, admit, reward: out.reward });
        if batch.len() == cfg.batch {
            let g = sage_gradient_estimate(&batch, &param)?;
            param.add_scaled(&g, cfg.step);
            batch.clear();
        }
        if run.records_at(t) {
            tracker.record(t, param.digest());
        }
    }
    let digest = param.digest();
    Ok(tracker.finish(run, "sage", Some(family), digest, param.dim()))
}

/// Actor-critic with a tabular differential value function.
pub fn run_ac(run: &RunSpec, family: ThetaFamily, cfg: &AcConfig) -> Result<RunLog> {
    cfg.validate()?;
    let mut env = RedundancyEnv::new(run.env.clone(), run.seed, run.stream)?;
    let mut rng = stream_rng(run.seed ^ 0x5a6e, run.stream);
    let n = run.env.n_classes();
    let mut param = initial_param(family, n, cfg.theta0);
    let mut v: HashMap<(Vec<u32>, usize), f64> = HashMap::new();
    let mut r_bar = 0.0;
    let mut tracker = Tracker::new(n);
    for t in 1..=run.total_steps {
        let state = env.state().clone();
        materialize(&mut param, &state);
        let admit = rng.random::<f64>() < policy_probs(&param, &state);
        let out = env.step(admit);
        tracker.observe(state.incoming_class, admit, out.reward);
        let cur = (state.word.key(), state.incoming_class);
        let next = v.get(&(out.next.word.key(), out.next.incoming_class)).copied().unwrap_or(0.0);
        let here = v.get(&cur).copied().unwrap_or(0.0);
        let delta = out.reward - r_bar + next - here;
        r_bar += cfg.step_rbar * delta;
        *v.entry(cur).or_insert(0.0) += cfg.step_v * delta;
        let x = state.word.counts(n);
        let g = param.grad_log_pi_sparse(&state.word.key(), &x, state.incoming_class, admit)?;
        param.add_scaled_sparse(&g, cfg.step_theta * delta);
        if run.records_at(t) {
            tracker.record(t, param.digest());
        }
    }
    let digest = param.digest();
    Ok(tracker.finish(run, "actor_critic", Some(family), digest, v.len()))
}

/// Differential Q-learning with ε-greedy exploration.
pub fn run_q(run: &RunSpec, cfg: &QConfig) -> Result<RunLog> {
    cfg.validate()?;
    let mut env = RedundancyEnv::new(run.env.clone(), run.seed, run.stream)?;
    let mut rng = stream_rng(run.seed ^ 0x5a6e, run.stream);
    let n = run.env.n_classes();
    let mut q: HashMap<(Vec<u32>, usize), [f64; 2]> = HashMap::new();
    let mut r_bar = 0.0;
    let mut tracker = Tracker::new(n);
    for t in 1..=run.total_steps {
        let m = (t - 1) / cfg.batch as u64;
        let eps = cfg.epsilon(m);
        let state = env.state().clone();
        let cur = (state.word.key(), state.incoming_class);
        let values = q.get(&cur).copied().unwrap_or([0.0; 2]);
        let admit = if rng.random::<f64>() < eps || values[0] == values[1] {
            rng.random::<bool>()
        } else {
            values[1] > values[0]
        };
        let out = env.step(admit);
        tracker.observe(state.incoming_class, admit, out.reward);
        let next = q.get(&(out.next.word.key(), out.next.incoming_class)).copied().unwrap_or([0.0; 2]);
        let delta = out.reward - r_bar + next[0].max(next[1]) - values[admit as usize];
        r_bar += cfg.step_rbar * delta;
        q.entry(cur).or_insert([0.0; 2])[admit as usize] += cfg.step_q * delta;
        if run.records_at(t) {
            tracker.record(t, q_digest(r_bar, q.len()));
        }
    }
    let digest = q_digest(r_bar, q.len());
    Ok(tracker.finish(run, "q_learning", None, digest, q.len()))
}

/// Q-learning has no θ; its snapshot digest hashes the average-reward estimate and the table size.
fn q_digest(r_bar: f64, size: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in r_bar.to_bits().to_le_bytes().into_iter().chain((size as u64).to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oiqueue::Word;

    fn st(word: &str, class: usize) -> EnvState {
        EnvState { word: Word::parse(word).unwrap(), incoming_class: class }
    }

    #[test]
    fn static_zero_admits_half() {
        let p = ThetaParam::new(ThetaFamily::Static, 3);
        assert_eq!(policy_probs(&p, &st("312", 1)), 0.5);
        let p = ThetaParam::from_theta(ThetaFamily::Static, 3, vec![40.0; 3]).unwrap();
        assert!(policy_probs(&p, &st("", 0)) > 1.0 - 1e-15);
    }

    #[test]
    fn constant_rewards_cancel_covariance() {
        let p = ThetaParam::new(ThetaFamily::Static, 2);
        let batch: Vec<Transition> = [("1", 0, true), ("12", 1, false), ("", 0, true)]
            .iter()
            .map(|&(w, i, a)| Transition { state: st(w, i), admit: a, reward: 2.0 })
            .collect();
        let g = sage_gradient_estimate(&batch, &p).unwrap();
        // Ē alone: 2/3 Σ ∇log π; admits give (1 - σ) = 0.5 and the reject gives -0.5.
        assert!((g[0] - 2.0 / 3.0 * (0.5 + 0.5)).abs() < 1e-15);
        assert!((g[1] - 2.0 / 3.0 * -0.5).abs() < 1e-15);
    }

    #[test]
    fn two_transition_batch_by_hand() {
        let p = ThetaParam::new(ThetaFamily::Static, 2);
        let batch = vec![
            Transition { state: st("11", 0), admit: false, reward: 3.0 },
            Transition { state: st("2", 1), admit: true, reward: 1.0 },
        ];
        // R̄ = 2; C̄ = (1·∇logΓ(2,0) - 1·∇logΓ(0,1)) / 1 = (1, -0.5)
        // Ē = (3·(-0.5, 0) + 1·(0, 0.5)) / 2 = (-0.75, 0.25)
        let g = sage_gradient_estimate(&batch, &p).unwrap();
        assert_eq!(g, vec![0.25, -0.25]);
        assert!(sage_gradient_estimate(&batch[..1], &p).is_err());
        assert!(sage_gradient_estimate(&batch, &ThetaParam::new(ThetaFamily::Imbalanced, 2)).is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let c = QConfig::default();
        assert_eq!(c.epsilon(0), 0.1);
        assert!((c.epsilon(1) - 0.09998).abs() < 1e-15);
        assert_eq!(c.epsilon(4995), 1e-4);
        assert!(c.epsilon(4994) > 1e-4);
        assert_eq!(c.epsilon(1_000_000), 1e-4);
    }

    #[test]
    fn decade_strides() {
        assert_eq!(decade_stride(7), 1);
        assert_eq!(decade_stride(999), 1);
        assert_eq!(decade_stride(1000), 10);
        assert_eq!(decade_stride(12_345), 100);
    }

    #[test]
    fn runs_are_reproducible_and_logs_are_valid() {
        let run = RunSpec { env: RedundancySpec::non_adversarial(), seed: 5, stream: 0, total_steps: 2000, record_stride: None };
        let a = run_sage(&run, ThetaFamily::DynamicCumProd, &SageConfig::default()).unwrap();
        assert_eq!(a, run_sage(&run, ThetaFamily::DynamicCumProd, &SageConfig::default()).unwrap());
        let b = run_ac(&run, ThetaFamily::Imbalanced, &AcConfig::default()).unwrap();
        let c = run_q(&run, &QConfig::default()).unwrap();
        for log in [&a, &b, &c] {
            assert_eq!(log.records.len(), 1000 + 100);
            assert!(log.records.windows(2).all(|w| w[0].step < w[1].step));
            assert!(log.records.iter().all(|r| r.admit_rate.iter().all(|p| (0.0..=1.0).contains(p))));
        }
    }
}
