use serde::{Deserialize, Serialize};

use super::oi::{OISpec, Word};
use crate::error::{QrError, Result};
use crate::qrcore::Macrostate;

/// Redundancy cancel-on-complete with abandonment on a bipartite compatibility graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedundancySpec {
    /// Arrival rate per class.
    pub nu: Vec<f64>,
    /// Abandonment rate per class.
    pub zeta: Vec<f64>,
    /// Service rate per server.
    pub mu: Vec<f64>,
    /// Reward per completed customer, per class.
    pub r: Vec<f64>,
    /// `B[i][j] = 1` if class `i` can be served by server `j`.
    #[serde(rename = "B")]
    pub b: Vec<Vec<u8>>,
}

impl RedundancySpec {
    fn chain_graph() -> Vec<Vec<u8>> {
        vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]]
    }

    /// Three classes on the chain graph, where the high-reward class abandons fastest.
    pub fn adversarial() -> Self {
        RedundancySpec {
            nu: vec![0.5, 0.5, 0.5],
            zeta: vec![0.1, 0.2, 0.5],
            mu: vec![0.5, 0.5, 0.5],
            r: vec![1.0, 2.0, 16.0],
            b: Self::chain_graph(),
        }
    }

    /// Same as [`adversarial`](Self::adversarial) with the abandonment rates of classes 1 and 3 swapped.
    pub fn non_adversarial() -> Self {
        RedundancySpec { zeta: vec![0.5, 0.2, 0.1], ..Self::adversarial() }
    }

    pub fn n_classes(&self) -> usize {
        self.nu.len()
    }

    pub fn n_servers(&self) -> usize {
        self.mu.len()
    }

    pub fn compatible(&self, i: usize, j: usize) -> bool {
        self.b[i][j] != 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nu.len();
        let m = self.mu.len();
        if n == 0 || m == 0 {
            return Err(QrError::InvalidParams("need at least one class and one server".into()));
        }
        if self.zeta.len() != n || self.r.len() != n || self.b.len() != n {
            return Err(QrError::InvalidParams("nu, zeta, r and B must have one entry per class".into()));
        }
        for (i, row) in self.b.iter().enumerate() {
            if row.len() != m {
                return Err(QrError::InvalidParams(format!("row {} of B has {} entries, expected {m}", i + 1, row.len())));
            }
            if row.iter().any(|&v| v > 1) {
                return Err(QrError::InvalidParams(format!("row {} of B is not 0/1", i + 1)));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(QrError::InvalidParams(format!("class {} has no compatible server", i + 1)));
            }
        }
        let positive = |name: &str, v: &[f64]| match v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            Some(x) => Err(QrError::InvalidParams(format!("{name} contains {x}, rates must be positive"))),
            None => Ok(()),
        };
        positive("nu", &self.nu)?;
        positive("zeta", &self.zeta)?;
        positive("mu", &self.mu)?;
        if let Some(x) = self.r.iter().find(|x| !x.is_finite()) {
            return Err(QrError::InvalidParams(format!("reward {x}")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: RedundancySpec = serde_json::from_str(text).map_err(|e| QrError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Total service capacity of the servers compatible with at least one customer, plus abandonment.
    pub fn rate(&self, x: &Macrostate) -> f64 {
        let n = self.n_classes();
        let service: f64 = (0..self.n_servers())
            .filter(|&j| (0..n).any(|i| x.get(i) > 0 && self.compatible(i, j)))
            .map(|j| self.mu[j])
            .sum();
        service + (0..n).map(|i| self.zeta[i] * x.get(i) as f64).sum::<f64>()
    }
}

pub fn redundancy_to_oi(spec: &RedundancySpec) -> OISpec {
    let s = spec.clone();
    OISpec::new(spec.nu.clone(), move |x| s.rate(x))
}

/// Reward and completion probability of the departure that removes the customer
/// at 0-based position `p`, which must be the oldest customer of its class.
///
/// Removing any customer of the run of class-`i` customers starting at `p`
/// yields the same word, so the departure merges a service completion by one of
/// the servers newly reached at `p` with the abandonment of any customer of the run.
pub fn redundancy_departure_reward(spec: &RedundancySpec, w: &Word, p: usize) -> Result<(f64, f64)> {
    let letters = w.letters();
    if p >= letters.len() {
        return Err(QrError::Contract(format!("position {} outside word {w}", p + 1)));
    }
    let i = letters[p] as usize;
    if letters[..p].iter().any(|&l| l as usize == i) {
        return Err(QrError::Contract(format!("position {} is not the oldest class-{} customer in {w}", p + 1, i + 1)));
    }
    let service: f64 = (0..spec.n_servers())
        .filter(|&j| spec.compatible(i, j) && letters[..p].iter().all(|&l| !spec.compatible(l as usize, j)))
        .map(|j| spec.mu[j])
        .sum();
    let run = letters[p..].iter().take_while(|&&l| l as usize == i).count();
    let total = service + spec.zeta[i] * run as f64;
    let prob = if total > 0.0 { service / total } else { 0.0 };
    Ok((spec.r[i] * prob, prob))
}

/// Expected reward attached to the transition from `w` to `t` in the OI kernel.
///
/// Only the removal of the oldest customer of a class can be a service completion;
/// any other removal is an abandonment and earns nothing.
pub fn redundancy_edge_reward(spec: &RedundancySpec, w: &Word, t: &Word) -> f64 {
    if t.len() + 1 != w.len() {
        return 0.0;
    }
    let letters = w.letters();
    let q = (0..t.len()).find(|&q| letters[q] != t.letters()[q]).unwrap_or(t.len());
    let i = letters[q];
    let oldest = letters.iter().position(|&l| l == i).expect("letter present");
    if w.remove(oldest) == *t {
        redundancy_departure_reward(spec, w, oldest).map_or(0.0, |(r, _)| r)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[u32]) -> Macrostate {
        Macrostate(v.to_vec())
    }

    #[test]
    fn rate_function_examples() {
        let s = RedundancySpec::adversarial();
        assert_eq!(s.rate(&m(&[0, 0, 0])), 0.0);
        assert!((s.rate(&m(&[0, 1, 0])) - 1.2).abs() < 1e-15);
        assert!((s.rate(&m(&[1, 1, 1])) - 2.3).abs() < 1e-15);
        assert!((s.rate(&m(&[1, 0, 1])) - 2.1).abs() < 1e-15);
    }

    #[test]
    fn departure_reward_examples() {
        let s = RedundancySpec::adversarial();
        let (r, p) = redundancy_departure_reward(&s, &Word::parse("33").unwrap(), 0).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        assert!((r - 16.0 / 3.0).abs() < 1e-14);
        let (r, p) = redundancy_departure_reward(&s, &Word::parse("1").unwrap(), 0).unwrap();
        assert!((p - 10.0 / 11.0).abs() < 1e-15);
        assert!((r - 10.0 / 11.0).abs() < 1e-15);
        assert!(matches!(
            redundancy_departure_reward(&s, &Word::parse("33").unwrap(), 1),
            Err(QrError::Contract(_))
        ));
    }

    #[test]
    fn no_abandonment_limit() {
        let s = RedundancySpec { zeta: vec![1e-12; 3], ..RedundancySpec::adversarial() };
        let (r, p) = redundancy_departure_reward(&s, &Word::parse("2").unwrap(), 0).unwrap();
        assert!((p - 1.0).abs() < 1e-10);
        assert!((r - 2.0).abs() < 1e-10);
    }

    #[test]
    fn edge_rewards() {
        let s = RedundancySpec::adversarial();
        let w = Word::parse("313").unwrap();
        // Removing the first 3 is a possible completion by server 3.
        let first = redundancy_edge_reward(&s, &w, &Word::parse("13").unwrap());
        assert!((first - 16.0 * 0.5 / 1.0).abs() < 1e-14);
        // Removing the second 3 is an abandonment.
        assert_eq!(redundancy_edge_reward(&s, &w, &Word::parse("31").unwrap()), 0.0);
    }

    #[test]
    fn json_fields() {
        let text = r#"{"nu":[1.0],"zeta":[0.5],"mu":[2.0],"r":[1.0],"B":[[1]]}"#;
        let s = RedundancySpec::from_json(text).unwrap();
        assert_eq!(s.b, vec![vec![1]]);
        assert!(RedundancySpec::from_json(r#"{"nu":[1.0],"zeta":[0.5],"mu":[2.0],"r":[1.0],"B":[[0]]}"#).is_err());
    }
}
