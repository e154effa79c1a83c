use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{QrError, Result};
use crate::qrcore::Macrostate;

/// Default initial value of the per-macrostate parameters of the dynamic family.
pub const DYNAMIC_THETA_INIT: f64 = 3.0;

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log σ(v)` without underflow for very negative `v`.
fn log_sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        -(-v).exp().ln_1p()
    } else {
        v - v.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaFamily {
    /// `Γ(x) = Π_i σ(θ_i)^{x_i}`.
    Static,
    /// Static times `Π_{i,j} σ(θ_{ij})^{x_i x_j}` over all ordered pairs, diagonal included.
    SemiStatic,
    /// `Γ(x) = Π_{0 ≠ y ≤ x} σ(θ_y)`, one parameter per macrostate, grown on demand.
    DynamicCumProd,
    /// `γ_i(s) = σ(θ_{s,i})` per microstate and class; not balanced.
    Imbalanced,
}

/// Sparse gradient: `(parameter index, partial derivative)` pairs.
pub type SparseGrad = Vec<(usize, f64)>;

/// A differentiable family of admission policies.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParam {
    family: ThetaFamily,
    n: usize,
    theta: Vec<f64>,
    init: f64,
    macro_keys: HashMap<Macrostate, usize>,
    micro_keys: HashMap<(Vec<u32>, usize), usize>,
}

impl ThetaParam {
    /// Parameters start at 0 for the static families and the imbalanced family,
    /// and at [`DYNAMIC_THETA_INIT`] for the dynamic family.
    pub fn new(family: ThetaFamily, n: usize) -> Self {
        let init = match family {
            ThetaFamily::DynamicCumProd => DYNAMIC_THETA_INIT,
            _ => 0.0,
        };
        Self::with_init(family, n, init)
    }

    /// `init` is the value of every fixed-size component and of grown components.
    pub fn with_init(family: ThetaFamily, n: usize, init: f64) -> Self {
        let d = match family {
            ThetaFamily::Static => n,
            ThetaFamily::SemiStatic => n + n * n,
            _ => 0,
        };
        ThetaParam { family, n, theta: vec![init; d], init, macro_keys: HashMap::new(), micro_keys: HashMap::new() }
    }

    /// Fixed-size families only.
    pub fn from_theta(family: ThetaFamily, n: usize, theta: Vec<f64>) -> Result<Self> {
        let mut p = Self::new(family, n);
        if !matches!(family, ThetaFamily::Static | ThetaFamily::SemiStatic) {
            return Err(QrError::Unsupported(format!("{family:?} parameters grow on demand")));
        }
        if theta.len() != p.theta.len() {
            return Err(QrError::InvalidParams(format!("expected {} parameters, got {}", p.theta.len(), theta.len())));
        }
        p.theta = theta;
        Ok(p)
    }

    pub fn family(&self) -> ThetaFamily {
        self.family
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn is_balanced(&self) -> bool {
        self.family != ThetaFamily::Imbalanced
    }

    /// Index of the pair parameter `θ_{ij}` in the semi-static family.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        self.n + i * self.n + j
    }

    /// Index of `θ_y` in the dynamic family, if materialized.
    pub fn macro_param(&self, y: &Macrostate) -> Option<usize> {
        self.macro_keys.get(y).copied()
    }

    fn macro_value(&self, y: &Macrostate) -> f64 {
        self.macro_keys.get(y).map_or(self.init, |&k| self.theta[k])
    }

    fn micro_value(&self, key: &[u32], i: usize) -> f64 {
        self.micro_keys.get(&(key.to_vec(), i)).map_or(self.init, |&k| self.theta[k])
    }

    fn ensure_macro(&mut self, y: Macrostate) {
        if !self.macro_keys.contains_key(&y) {
            self.macro_keys.insert(y, self.theta.len());
            self.theta.push(self.init);
        }
    }

    /// Creates the parameters needed to evaluate gradients at microstate `key` with macrostate `x`.
    pub fn materialize(&mut self, key: &[u32], x: &Macrostate) {
        match self.family {
            ThetaFamily::Static | ThetaFamily::SemiStatic => {}
            ThetaFamily::DynamicCumProd => {
                // Every y ≤ x + e_i for some i, in lexicographic order for reproducible indices.
                let top: Vec<u32> = x.as_slice().iter().map(|c| c + 1).collect();
                let mut cur = vec![0u32; self.n];
                loop {
                    let y = Macrostate(cur.clone());
                    let over = (0..self.n).filter(|&a| cur[a] > x.get(a)).count();
                    if over <= 1 && !y.is_zero() {
                        self.ensure_macro(y);
                    }
                    let mut a = self.n;
                    loop {
                        if a == 0 {
                            return;
                        }
                        a -= 1;
                        if cur[a] < top[a] {
                            cur[a] += 1;
                            break;
                        }
                        cur[a] = 0;
                    }
                }
            }
            ThetaFamily::Imbalanced => {
                for i in 0..self.n {
                    let k = (key.to_vec(), i);
                    if !self.micro_keys.contains_key(&k) {
                        self.micro_keys.insert(k, self.theta.len());
                        self.theta.push(self.init);
                    }
                }
            }
        }
    }

    /// `log Γ_θ(x)`.
    pub fn log_gamma(&self, x: &Macrostate) -> Result<f64> {
        let n = self.n;
        match self.family {
            ThetaFamily::Static => Ok((0..n).map(|i| x.get(i) as f64 * log_sigmoid(self.theta[i])).sum()),
            ThetaFamily::SemiStatic => {
                let mut v: f64 = (0..n).map(|i| x.get(i) as f64 * log_sigmoid(self.theta[i])).sum();
                for i in 0..n {
                    for j in 0..n {
                        v += (x.get(i) * x.get(j)) as f64 * log_sigmoid(self.theta[self.pair_index(i, j)]);
                    }
                }
                Ok(v)
            }
            ThetaFamily::DynamicCumProd => {
                let mut v = 0.0;
                for_each_below(x, |y| {
                    if !y.is_zero() {
                        v += log_sigmoid(self.macro_value(y));
                    }
                });
                Ok(v)
            }
            ThetaFamily::Imbalanced => Err(QrError::Unsupported("the imbalanced family has no balance function".into())),
        }
    }

    /// Probability of admitting a class-`i` arrival at microstate `key` with macrostate `x`.
    pub fn admit_prob(&self, key: &[u32], x: &Macrostate, i: usize) -> f64 {
        match self.family {
            ThetaFamily::Static => sigmoid(self.theta[i]),
            ThetaFamily::SemiStatic => {
                let mut lg = log_sigmoid(self.theta[i]);
                for j in 0..self.n {
                    for k in 0..self.n {
                        let e = self.pair_exponent(x, i, j, k);
                        if e > 0.0 {
                            lg += e * log_sigmoid(self.theta[self.pair_index(j, k)]);
                        }
                    }
                }
                lg.exp()
            }
            ThetaFamily::DynamicCumProd => {
                let mut lg = 0.0;
                for_each_new_below(x, i, |y| lg += log_sigmoid(self.macro_value(y)));
                lg.exp()
            }
            ThetaFamily::Imbalanced => sigmoid(self.micro_value(key, i)),
        }
    }

    /// Exponent of `σ(θ_{jk})` in `γ_i(x)`: `(x+e_i)_j (x+e_i)_k - x_j x_k`.
    fn pair_exponent(&self, x: &Macrostate, i: usize, j: usize, k: usize) -> f64 {
        let d = |a: usize, b: usize| (a == b) as u32;
        (d(i, j) * x.get(k) + d(i, k) * x.get(j) + d(i, j) * d(i, k)) as f64
    }

    /// Sparse `∇ log Γ_θ(x)`.
    pub fn grad_log_gamma_sparse(&self, x: &Macrostate) -> Result<SparseGrad> {
        let n = self.n;
        match self.family {
            ThetaFamily::Static => {
                Ok((0..n).filter(|&i| x.get(i) > 0).map(|i| (i, x.get(i) as f64 * (1.0 - sigmoid(self.theta[i])))).collect())
            }
            ThetaFamily::SemiStatic => {
                let mut g: SparseGrad =
                    (0..n).filter(|&i| x.get(i) > 0).map(|i| (i, x.get(i) as f64 * (1.0 - sigmoid(self.theta[i])))).collect();
                for i in 0..n {
                    for j in 0..n {
                        let e = (x.get(i) * x.get(j)) as f64;
                        if e > 0.0 {
                            let k = self.pair_index(i, j);
                            g.push((k, e * (1.0 - sigmoid(self.theta[k]))));
                        }
                    }
                }
                Ok(g)
            }
            ThetaFamily::DynamicCumProd => {
                let mut g = Vec::new();
                let mut missing = None;
                for_each_below(x, |y| {
                    if y.is_zero() {
                        return;
                    }
                    match self.macro_keys.get(y) {
                        Some(&k) => g.push((k, 1.0 - sigmoid(self.theta[k]))),
                        None => missing = Some(y.clone()),
                    }
                });
                match missing {
                    Some(y) => Err(QrError::Contract(format!("parameter for {y} not materialized"))),
                    None => Ok(g),
                }
            }
            ThetaFamily::Imbalanced => Err(QrError::Unsupported("the imbalanced family has no balance function".into())),
        }
    }

    /// Sparse `∇ log γ_{θ,i}` at microstate `key` with macrostate `x`.
    pub fn grad_log_admit_sparse(&self, key: &[u32], x: &Macrostate, i: usize) -> Result<SparseGrad> {
        match self.family {
            ThetaFamily::Static => Ok(vec![(i, 1.0 - sigmoid(self.theta[i]))]),
            ThetaFamily::SemiStatic => {
                let mut g = vec![(i, 1.0 - sigmoid(self.theta[i]))];
                for j in 0..self.n {
                    for k in 0..self.n {
                        let e = self.pair_exponent(x, i, j, k);
                        if e > 0.0 {
                            let p = self.pair_index(j, k);
                            g.push((p, e * (1.0 - sigmoid(self.theta[p]))));
                        }
                    }
                }
                Ok(g)
            }
            ThetaFamily::DynamicCumProd => {
                let mut g = Vec::new();
                let mut missing = None;
                for_each_new_below(x, i, |y| match self.macro_keys.get(y) {
                    Some(&k) => g.push((k, 1.0 - sigmoid(self.theta[k]))),
                    None => missing = Some(y.clone()),
                });
                match missing {
                    Some(y) => Err(QrError::Contract(format!("parameter for {y} not materialized"))),
                    None => Ok(g),
                }
            }
            ThetaFamily::Imbalanced => match self.micro_keys.get(&(key.to_vec(), i)) {
                Some(&k) => Ok(vec![(k, 1.0 - sigmoid(self.theta[k]))]),
                None => Err(QrError::Contract(format!("parameter for state {key:?}, class {} not materialized", i + 1))),
            },
        }
    }

    /// Sparse `∇ log π_θ(s, i, a)` where `a` is admit (`true`) or reject.
    pub fn grad_log_pi_sparse(&self, key: &[u32], x: &Macrostate, i: usize, admit: bool) -> Result<SparseGrad> {
        let g = self.grad_log_admit_sparse(key, x, i)?;
        if admit {
            return Ok(g);
        }
        let p = self.admit_prob(key, x, i);
        let f = -p / (1.0 - p);
        Ok(g.into_iter().map(|(k, v)| (k, f * v)).collect())
    }

    /// Dense `∇ log Γ_θ(x)` of length [`dim`](Self::dim).
    pub fn grad_log_gamma(&self, x: &Macrostate) -> Result<Vec<f64>> {
        Ok(self.densify(&self.grad_log_gamma_sparse(x)?))
    }

    pub fn densify(&self, g: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; self.theta.len()];
        for &(k, d) in g {
            v[k] += d;
        }
        v
    }

    /// `θ ← θ + step · g`; `g` may be shorter than θ.
    pub fn add_scaled(&mut self, g: &[f64], step: f64) {
        for (t, d) in self.theta.iter_mut().zip(g) {
            *t += step * d;
        }
    }

    pub fn add_scaled_sparse(&mut self, g: &[(usize, f64)], step: f64) {
        for &(k, d) in g {
            self.theta[k] += step * d;
        }
    }

    /// FNV-1a hash of the parameter bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.theta {
            for b in t.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Visits every `y ≤ x` (origin included).
fn for_each_below(x: &Macrostate, mut f: impl FnMut(&Macrostate)) {
    let n = x.dim();
    let mut y = Macrostate::zeros(n);
    loop {
        f(&y);
        let mut a = n;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            if y.0[a] < x.get(a) {
                y.0[a] += 1;
                break;
            }
            y.0[a] = 0;
        }
    }
}

/// Visits every `y ≤ x + e_i` with `y_i = x_i + 1`.
fn for_each_new_below(x: &Macrostate, i: usize, mut f: impl FnMut(&Macrostate)) {
    let mut top = x.clone();
    top.0[i] = 0;
    for_each_below(&top, |y| {
        let mut z = y.clone();
        z.0[i] = x.get(i) + 1;
        f(&z);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[u32]) -> Macrostate {
        Macrostate(v.to_vec())
    }

    #[test]
    fn static_gradient_at_zero_theta() {
        let p = ThetaParam::new(ThetaFamily::Static, 2);
        assert_eq!(p.grad_log_gamma(&m(&[2, 1])).unwrap(), vec![1.0, 0.5]);
        assert_eq!(p.admit_prob(&[], &m(&[4, 4]), 1), 0.5);
    }

    #[test]
    fn zero_state_has_zero_gradient() {
        for fam in [ThetaFamily::Static, ThetaFamily::SemiStatic, ThetaFamily::DynamicCumProd] {
            let mut p = ThetaParam::new(fam, 3);
            p.materialize(&[], &m(&[0, 0, 0]));
            let g = p.grad_log_gamma(&m(&[0, 0, 0])).unwrap();
            assert!(g.iter().all(|v| *v == 0.0));
            assert_eq!(p.log_gamma(&m(&[0, 0, 0])).unwrap(), 0.0);
        }
    }

    #[test]
    fn admit_prob_is_gamma_ratio() {
        let mut p = ThetaParam::new(ThetaFamily::SemiStatic, 2);
        for (k, t) in p.theta_mut().iter_mut().enumerate() {
            *t = 0.3 * k as f64 - 0.5;
        }
        let x = m(&[2, 1]);
        for i in 0..2 {
            let ratio = (p.log_gamma(&x.plus(i)).unwrap() - p.log_gamma(&x).unwrap()).exp();
            assert!((p.admit_prob(&[], &x, i) - ratio).abs() < 1e-14);
        }
        let mut d = ThetaParam::new(ThetaFamily::DynamicCumProd, 2);
        d.materialize(&[], &x);
        for (k, t) in d.theta_mut().iter_mut().enumerate() {
            *t = 0.1 * k as f64;
        }
        for i in 0..2 {
            let ratio = (d.log_gamma(&x.plus(i)).unwrap() - d.log_gamma(&x).unwrap()).exp();
            assert!((d.admit_prob(&[], &x, i) - ratio).abs() < 1e-14);
        }
    }

    #[test]
    fn dynamic_site_gradient() {
        let mut p = ThetaParam::new(ThetaFamily::DynamicCumProd, 2);
        p.materialize(&[], &m(&[2, 2]));
        let y = m(&[1, 1]);
        let k = p.macro_param(&y).unwrap();
        let expect = 1.0 - sigmoid(DYNAMIC_THETA_INIT);
        assert!((p.grad_log_gamma(&m(&[2, 1])).unwrap()[k] - expect).abs() < 1e-15);
        assert_eq!(p.grad_log_gamma(&m(&[2, 0])).unwrap()[k], 0.0);
        let fresh = ThetaParam::new(ThetaFamily::DynamicCumProd, 2);
        assert!(matches!(fresh.grad_log_gamma_sparse(&m(&[1, 0])), Err(QrError::Contract(_))));
    }

    #[test]
    fn imbalanced_has_no_gamma() {
        let mut p = ThetaParam::new(ThetaFamily::Imbalanced, 2);
        assert!(matches!(p.log_gamma(&m(&[0, 0])), Err(QrError::Unsupported(_))));
        assert_eq!(p.admit_prob(&[0], &m(&[0, 0]), 0), 0.5);
        p.materialize(&[0], &m(&[0, 0]));
        assert_eq!(p.dim(), 2);
        let g = p.grad_log_pi_sparse(&[0], &m(&[0, 0]), 1, false).unwrap();
        assert_eq!(g, vec![(1, -0.5)]);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((log_sigmoid(-50.0) + 50.0).abs() < 1e-12);
    }
}
