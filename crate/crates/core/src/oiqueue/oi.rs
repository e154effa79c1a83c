use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{QrError, Result};
use crate::qrcore::{FerrersSet, Macrostate, QueueSystem, QueueSystemBuilder};

/// Sequence of 0-based class labels, oldest customer first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(pub Vec<u32>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[u32] {
        &self.0
    }

    pub fn counts(&self, n: usize) -> Macrostate {
        let mut c = vec![0u32; n];
        for &l in &self.0 {
            c[l as usize] += 1;
        }
        Macrostate(c)
    }

    /// Canonical system key: length first, then letters.
    pub fn key(&self) -> Vec<u32> {
        let mut k = Vec::with_capacity(self.0.len() + 1);
        k.push(self.0.len() as u32);
        k.extend_from_slice(&self.0);
        k
    }

    pub fn from_key(key: &[u32]) -> Word {
        Word(key[1..].to_vec())
    }

    pub fn push(&self, class: usize) -> Word {
        let mut v = self.0.clone();
        v.push(class as u32);
        Word(v)
    }

    /// Word with the letter at position `p` removed.
    pub fn remove(&self, p: usize) -> Word {
        let mut v = self.0.clone();
        v.remove(p);
        Word(v)
    }

    /// Parses 1-based digits such as `"132"`; `"∅"` is the empty word.
    pub fn parse(text: &str) -> Result<Word> {
        if text == "∅" {
            return Ok(Word::empty());
        }
        text.chars()
            .map(|c| match c.to_digit(10) {
                Some(d) if d >= 1 => Ok(d - 1),
                _ => Err(QrError::Parse(format!("bad class label {c:?} in word {text:?}"))),
            })
            .collect::<Result<Vec<u32>>>()
            .map(Word)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "∅");
        }
        for l in &self.0 {
            write!(f, "{}", l + 1)?;
        }
        Ok(())
    }
}

pub type RateFn = Arc<dyn Fn(&Macrostate) -> f64 + Send + Sync>;
pub type AdmissibleFn = Arc<dyn Fn(&Macrostate) -> bool + Send + Sync>;

/// An order-independent queue: arrival rates and a total departure rate function.
#[derive(Clone)]
pub struct OISpec {
    pub n: usize,
    pub nu: Vec<f64>,
    pub mu: RateFn,
    pub admissible: AdmissibleFn,
}

impl fmt::Debug for OISpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OISpec").field("n", &self.n).field("nu", &self.nu).finish_non_exhaustive()
    }
}

impl OISpec {
    /// Spec with every macrostate admissible.
    pub fn new(nu: Vec<f64>, mu: impl Fn(&Macrostate) -> f64 + Send + Sync + 'static) -> Self {
        OISpec { n: nu.len(), nu, mu: Arc::new(mu), admissible: Arc::new(|_| true) }
    }

    pub fn mu(&self, x: &Macrostate) -> f64 {
        (self.mu)(x)
    }

    /// `μ` of the prefix of length `p` of `w`.
    pub fn mu_prefix(&self, w: &Word, p: usize) -> f64 {
        self.mu(&Word(w.0[..p].to_vec()).counts(self.n))
    }

    /// Departure rate of the customer at 0-based position `p`.
    pub fn delta_mu(&self, w: &Word, p: usize) -> f64 {
        self.mu_prefix(w, p + 1) - self.mu_prefix(w, p)
    }

    /// Checks the rate function on a truncation.
    pub fn validate(&self, truncation: &FerrersSet) -> Result<()> {
        if self.nu.len() != self.n || truncation.dim() != self.n {
            return Err(QrError::InvalidParams("class count mismatch".into()));
        }
        if let Some(v) = self.nu.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(QrError::InvalidParams(format!("arrival rate {v} must be positive")));
        }
        for x in truncation.iter() {
            if !(self.admissible)(x) {
                return Err(QrError::InvalidParams(format!("{x} is in the truncation but not admissible")));
            }
            let v = self.mu(x);
            if x.is_zero() {
                if v != 0.0 {
                    return Err(QrError::InvalidParams(format!("rate function is {v} at the origin")));
                }
            } else if !(v.is_finite() && v > 0.0) {
                return Err(QrError::InvalidParams(format!("rate function is {v} at {x}")));
            }
            for i in 0..self.n {
                let up = x.plus(i);
                if truncation.contains(&up) && self.mu(&up) < v * (1.0 - 1e-12) {
                    return Err(QrError::InvalidParams(format!("rate function decreases from {x} to {up}")));
                }
            }
        }
        Ok(())
    }
}

/// Every word whose macrostate lies in `truncation`, by length then lexicographically.
pub fn enumerate_words(n: usize, truncation: &FerrersSet) -> Vec<Word> {
    let mut all = vec![Word::empty()];
    let mut frontier = vec![Word::empty()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for w in &frontier {
            let x = w.counts(n);
            for i in 0..n {
                if truncation.contains(&x.plus(i)) {
                    next.push(w.push(i));
                }
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Builds the OI queue restricted to the words whose macrostate lies in `truncation`.
///
/// Arrivals leaving the truncation are dropped.
pub fn build_oi_system(spec: &OISpec, truncation: &FerrersSet) -> Result<QueueSystem> {
    spec.validate(truncation)?;
    let n = spec.n;
    let words = enumerate_words(n, truncation);
    let mut b = QueueSystemBuilder::new(n);
    for w in &words {
        b.add_state(w.key(), w.counts(n))?;
    }
    for w in &words {
        let x = w.counts(n);
        for i in 0..n {
            if truncation.contains(&x.plus(i)) {
                b.add_edge(w.key(), w.push(i).key(), spec.nu[i])?;
            }
        }
        let mut prev = 0.0;
        for p in 0..w.len() {
            let cur = spec.mu_prefix(w, p + 1);
            let rate = (cur - prev).max(0.0);
            prev = cur;
            if rate > 0.0 {
                b.add_edge(w.key(), w.remove(p).key(), rate)?;
            }
        }
    }
    b.build()
}

/// Unnormalized product-form measure `Π_p ν_{w_p} / μ(w_1 ⋯ w_p)` with value 1 at the empty word.
pub fn oi_product_form(spec: &OISpec, w: &Word) -> Result<f64> {
    let mut v = 1.0;
    for p in 0..w.len() {
        let m = spec.mu_prefix(w, p + 1);
        if !(m > 0.0) {
            return Err(QrError::InvalidParams(format!("rate function is {m} on a prefix of {w}")));
        }
        v *= spec.nu[w.0[p] as usize] / m;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrcore::{check_quasi_reversibility, solve_stationary};

    #[test]
    fn product_form_examples() {
        let spec = OISpec::new(vec![1.0], |x| if x.total() > 0 { 2.0 } else { 0.0 });
        assert_eq!(oi_product_form(&spec, &Word::empty()).unwrap(), 1.0);
        assert_eq!(oi_product_form(&spec, &Word(vec![0, 0, 0])).unwrap(), 0.125);

        let spec = OISpec::new(vec![1.0, 1.0], |x| x.total() as f64);
        assert_eq!(oi_product_form(&spec, &Word::parse("21").unwrap()).unwrap(), 0.5);
        assert_eq!(oi_product_form(&spec, &Word::parse("12").unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn constant_rate_is_mm1() {
        let spec = OISpec::new(vec![1.0], |x| if x.total() > 0 { 3.0 } else { 0.0 });
        let sys = build_oi_system(&spec, &FerrersSet::boxed(&[3])).unwrap();
        let w = Word(vec![0, 0, 0]);
        let s = sys.index_of(&w.key()).unwrap();
        let deps: Vec<_> = sys.out_edges(s).map(|(_, e)| (e.to, e.rate)).collect();
        assert_eq!(deps, vec![(sys.index_of(&Word(vec![0, 0]).key()).unwrap(), 3.0)]);
    }

    #[test]
    fn linear_rate_is_pure_abandonment() {
        let spec = OISpec::new(vec![1.0, 1.0], |x| x.total() as f64);
        let w = Word::parse("12").unwrap();
        assert_eq!(spec.delta_mu(&w, 0), 1.0);
        assert_eq!(spec.delta_mu(&w, 1), 1.0);
    }

    #[test]
    fn solve_matches_product_form() {
        let spec = OISpec::new(vec![0.7, 0.4], |x| {
            let busy = (x.get(0) > 0) as u8 as f64 + (x.get(1) > 0) as u8 as f64;
            busy + 0.3 * x.total() as f64
        });
        let trunc = FerrersSet::total_cap(2, 4);
        let sys = build_oi_system(&spec, &trunc).unwrap();
        let pi = solve_stationary(&sys).unwrap();
        let z: f64 = (0..sys.n_states()).map(|s| oi_product_form(&spec, &Word::from_key(sys.key(s))).unwrap()).sum();
        for s in 0..sys.n_states() {
            let pf = oi_product_form(&spec, &Word::from_key(sys.key(s))).unwrap() / z;
            assert!((pf - pi.get(s)).abs() < 1e-12);
        }
        assert!(check_quasi_reversibility(&sys, &pi, 1e-12).unwrap().quasi_reversible);
    }

    #[test]
    fn rejects_decreasing_rate() {
        let spec = OISpec::new(vec![1.0], |x| match x.total() {
            0 => 0.0,
            1 => 2.0,
            _ => 1.0,
        });
        assert!(build_oi_system(&spec, &FerrersSet::boxed(&[2])).is_err());
    }
}
