use std::collections::HashMap;

use crate::balance::ThetaParam;
use crate::error::{QrError, Result};
use crate::oiqueue::{enumerate_words, oi_product_form, redundancy_to_oi, RedundancySpec, Word};
use crate::qrcore::{FerrersSet, Macrostate};

/// Smallest fraction of the stationary mass a truncation must hold.
pub const MIN_TRUNCATION_MASS: f64 = 1.0 - 1e-8;

/// Expected completion reward collected before the next arrival, starting from word `w`.
///
/// Departures only shorten the word, so the recursion over subwords is finite.
pub fn expected_step_reward(spec: &RedundancySpec, w: &Word, memo: &mut HashMap<Word, f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    if let Some(&v) = memo.get(w) {
        return v;
    }
    let letters = w.letters();
    let nu_total: f64 = spec.nu.iter().sum();
    let mut service = vec![0.0; letters.len()];
    for j in 0..spec.n_servers() {
        if let Some(p) = letters.iter().position(|&l| spec.compatible(l as usize, j)) {
            service[p] += spec.mu[j];
        }
    }
    let mut total = nu_total;
    let mut acc = 0.0;
    for (p, &l) in letters.iter().enumerate() {
        let c = l as usize;
        let out = service[p] + spec.zeta[c];
        total += out;
        acc += service[p] * spec.r[c] + out * expected_step_reward(spec, &w.remove(p), memo);
    }
    let v = acc / total;
    memo.insert(w.clone(), v);
    v
}

/// Unnormalized macrostate measure of the uncontrolled OI queue on `{x : |x| ≤ cap}`,
/// from `Φ(x) = Σ_i ν_i Φ(x - e_i) / μ(x)`.
pub fn oi_macro_measure(spec: &RedundancySpec, cap: u32) -> (FerrersSet, Vec<f64>) {
    let n = spec.n_classes();
    let dom = FerrersSet::total_cap(n, cap);
    let mut phi = vec![0.0; dom.len()];
    // members are sorted, so every x - e_i precedes x
    for (k, x) in dom.iter().enumerate() {
        if x.is_zero() {
            phi[k] = 1.0;
            continue;
        }
        let mut v = 0.0;
        for i in 0..n {
            if let Some(y) = x.minus(i) {
                v += spec.nu[i] * phi[dom.index_of(&y).expect("Ferrers")];
            }
        }
        phi[k] = v / spec.rate(x);
    }
    (dom, phi)
}

/// Fraction of the mass of `Π_θ` on totals up to `2 cap` that lies on totals up to `cap`.
pub fn truncation_mass(spec: &RedundancySpec, param: &ThetaParam, cap: u32) -> Result<f64> {
    let (dom, phi) = oi_macro_measure(spec, 2 * cap);
    let (mut inner, mut all) = (0.0, 0.0);
    let base = param.log_gamma(&Macrostate::zeros(spec.n_classes()))?;
    for (x, f) in dom.iter().zip(&phi) {
        let v = f * (param.log_gamma(x)? - base).exp();
        all += v;
        if x.total() <= cap {
            inner += v;
        }
    }
    Ok(inner / all)
}

/// Exact quantities of the arrival-embedded MDP on the words of length at most `cap`.
#[derive(Debug, Clone)]
pub struct ExactModel {
    spec: RedundancySpec,
    cap: u32,
    words: Vec<Word>,
    index: HashMap<Word, usize>,
    counts: Vec<Macrostate>,
    /// Uncontrolled OI measure of each word.
    base: Vec<f64>,
    /// Expected step reward per word and class when the arrival is admitted.
    reward_admit: Vec<Vec<f64>>,
    /// Expected step reward per word when the arrival is rejected.
    reward_reject: Vec<f64>,
    /// `ν_i / Σ_j ν_j`.
    class_prob: Vec<f64>,
}

/// Gain and its gradient at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGradient {
    pub gain: f64,
    pub gradient: Vec<f64>,
}

impl ExactModel {
    pub fn new(spec: &RedundancySpec, cap: u32) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_classes();
        let oi = redundancy_to_oi(spec);
        let words = enumerate_words(n, &FerrersSet::total_cap(n, cap));
        let counts: Vec<Macrostate> = words.iter().map(|w| w.counts(n)).collect();
        let base = words.iter().map(|w| oi_product_form(&oi, w)).collect::<Result<Vec<f64>>>()?;
        let mut memo = HashMap::new();
        let reward_reject = words.iter().map(|w| expected_step_reward(spec, w, &mut memo)).collect();
        let reward_admit = words
            .iter()
            .map(|w| (0..n).map(|i| expected_step_reward(spec, &w.push(i), &mut memo)).collect())
            .collect();
        let nu_total: f64 = spec.nu.iter().sum();
        let class_prob = spec.nu.iter().map(|v| v / nu_total).collect();
        let index = words.iter().cloned().enumerate().map(|(k, w)| (w, k)).collect();
        Ok(ExactModel { spec: spec.clone(), cap, words, index, counts, base, reward_admit, reward_reject, class_prob })
    }

    pub fn spec(&self) -> &RedundancySpec {
        &self.spec
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn index_of(&self, w: &Word) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn reward_admit(&self, k: usize, i: usize) -> f64 {
        self.reward_admit[k][i]
    }

    pub fn reward_reject(&self, k: usize) -> f64 {
        self.reward_reject[k]
    }

    /// Creates every parameter a balanced family needs on this truncation.
    pub fn materialize(&self, param: &mut ThetaParam) {
        for (w, x) in self.words.iter().zip(&self.counts) {
            param.materialize(&w.key(), x);
        }
    }

    /// Fails unless the truncation holds at least [`MIN_TRUNCATION_MASS`] of `Π_θ`.
    pub fn check_mass(&self, param: &ThetaParam) -> Result<f64> {
        let mass = truncation_mass(&self.spec, param, self.cap)?;
        if mass < MIN_TRUNCATION_MASS {
            return Err(QrError::TruncationTooSmall { cap: self.cap, mass });
        }
        Ok(mass)
    }

    /// Normalized `Π_θ(s) ∝ Π(s) Γ_θ(|s|)` over the words of the truncation.
    pub fn stationary(&self, param: &ThetaParam) -> Result<Vec<f64>> {
        let logs = self.counts.iter().map(|x| param.log_gamma(x)).collect::<Result<Vec<f64>>>()?;
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut pi: Vec<f64> = self.base.iter().zip(&logs).map(|(b, l)| b * (l - top).exp()).collect();
        let z: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= z);
        Ok(pi)
    }

    /// `E_{Π_θ}[∇ log Γ_θ(S)]`.
    fn mean_score(&self, param: &ThetaParam, pi: &[f64]) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; param.dim()];
        for (x, p) in self.counts.iter().zip(pi) {
            for (k, g) in param.grad_log_gamma_sparse(x)? {
                mean[k] += p * g;
            }
        }
        Ok(mean)
    }

    /// `∇ log Π_θ(w) = ∇ log Γ_θ(|w|) - E_{Π_θ}[∇ log Γ_θ(S)]`.
    pub fn log_pi_gradient(&self, param: &ThetaParam, w: &Word) -> Result<Vec<f64>> {
        self.check_mass(param)?;
        let pi = self.stationary(param)?;
        let mean = self.mean_score(param, &pi)?;
        let mut g = param.grad_log_gamma(&w.counts(self.spec.n_classes()))?;
        g.iter_mut().zip(&mean).for_each(|(a, b)| *a -= b);
        Ok(g)
    }

    /// Long-run reward per decision epoch.
    pub fn gain(&self, param: &ThetaParam) -> Result<f64> {
        let pi = self.stationary(param)?;
        Ok(self.gain_with(param, &pi))
    }

    fn gain_with(&self, param: &ThetaParam, pi: &[f64]) -> f64 {
        let mut g = 0.0;
        for (k, w) in self.words.iter().enumerate() {
            g += pi[k] * self.mean_reward(param, k, &w.key());
        }
        g
    }

    /// Expected step reward in word `k`, averaged over the arriving class and the action.
    fn mean_reward(&self, param: &ThetaParam, k: usize, key: &[u32]) -> f64 {
        let x = &self.counts[k];
        (0..self.spec.n_classes())
            .map(|i| {
                let p = param.admit_prob(key, x, i);
                self.class_prob[i] * (p * self.reward_admit[k][i] + (1.0 - p) * self.reward_reject[k])
            })
            .sum()
    }

    /// `Cov(R, ∇ log Γ_θ(S)) + E[R ∇ log π_θ(S, I, A)]` under the stationary tuple.
    pub fn gain_gradient(&self, param: &ThetaParam) -> Result<ExactGradient> {
        self.check_mass(param)?;
        let pi = self.stationary(param)?;
        let mean = self.mean_score(param, &pi)?;
        let gain = self.gain_with(param, &pi);
        let mut grad = vec![0.0; param.dim()];
        for (k, w) in self.words.iter().enumerate() {
            let key = w.key();
            let x = &self.counts[k];
            let r = self.mean_reward(param, k, &key);
            for (j, g) in param.grad_log_gamma_sparse(x)? {
                grad[j] += pi[k] * r * g;
            }
            for j in 0..grad.len() {
                grad[j] -= pi[k] * r * mean[j];
            }
            for i in 0..self.spec.n_classes() {
                let p = param.admit_prob(&key, x, i);
                let weight = pi[k] * self.class_prob[i];
                for (j, g) in param.grad_log_pi_sparse(&key, x, i, true)? {
                    grad[j] += weight * p * self.reward_admit[k][i] * g;
                }
                for (j, g) in param.grad_log_pi_sparse(&key, x, i, false)? {
                    grad[j] += weight * (1.0 - p) * self.reward_reject[k] * g;
                }
            }
        }
        Ok(ExactGradient { gain, gradient: grad })
    }
}
