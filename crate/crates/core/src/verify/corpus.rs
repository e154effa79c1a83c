//! Seeded random instances used by the verification suites.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::balance::{BalanceFunction, Family};
use crate::error::Result;
use crate::oiqueue::{redundancy_to_oi, OISpec, RedundancySpec};
use crate::qrcore::{FerrersSet, Macrostate};
use crate::whittle::{tandem, PhiSpec, ServiceRate, WhittleSpec, WhittleTruncation};

/// Largest number of microstates of a corpus instance.
pub const MAX_MICROSTATES: usize = 500;

/// An OI queue together with the macrostate truncation it lives on.
#[derive(Debug, Clone)]
pub struct OiInstance {
    pub name: String,
    pub spec: OISpec,
    pub truncation: FerrersSet,
}

/// A Whittle network together with its class-total truncation.
#[derive(Debug, Clone)]
pub struct WhittleInstance {
    pub name: String,
    pub spec: WhittleSpec,
    pub totals: FerrersSet,
}

impl WhittleInstance {
    pub fn truncation(&self) -> WhittleTruncation {
        WhittleTruncation::ClassTotals(self.totals.clone())
    }

    /// Number of states of the matched OI queue, whose words run over labels.
    pub fn oi_word_count(&self) -> Result<usize> {
        Ok(word_count(&self.truncation().as_ferrers(&self.spec)?))
    }
}

/// Largest matched OI queue built when comparing a Whittle network with its OI counterpart.
pub const MAX_EQUIVALENCE_WORDS: usize = 5000;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Number of words with macrostate in the set.
pub fn word_count(set: &FerrersSet) -> usize {
    set.iter()
        .map(|x| {
            let total = x.total();
            let mut c = (1..=total as u64).product::<u64>();
            for &v in x.as_slice() {
                c /= (1..=v as u64).product::<u64>();
            }
            c as usize
        })
        .sum()
}

/// Largest total-count cap whose words fit in [`MAX_MICROSTATES`], at most `limit`.
fn word_cap(n: usize, limit: u32) -> u32 {
    let mut cap = 1;
    while cap < limit && word_count(&FerrersSet::total_cap(n, cap + 1)) <= MAX_MICROSTATES {
        cap += 1;
    }
    cap
}

/// Random redundancy system with every class compatible with at least one server.
pub fn random_redundancy(r: &mut impl Rng, n: usize, m: usize) -> RedundancySpec {
    let mut b = vec![vec![0u8; m]; n];
    for row in b.iter_mut() {
        for v in row.iter_mut() {
            *v = r.random_bool(0.5) as u8;
        }
        let j = r.random_range(0..m);
        row[j] = 1;
    }
    RedundancySpec {
        nu: (0..n).map(|_| r.random_range(0.2..1.5)).collect(),
        zeta: (0..n).map(|_| r.random_range(0.05..1.0)).collect(),
        mu: (0..m).map(|_| r.random_range(0.3..2.0)).collect(),
        r: (0..n).map(|_| r.random_range(0.0..10.0)).collect(),
        b,
    }
}

/// Random OI queue: a redundancy system or a multi-server queue with rate `c · min(|x|, k)`.
pub fn random_oi(seed: u64) -> OiInstance {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let cap = word_cap(n, 8);
    let truncation = FerrersSet::total_cap(n, cap);
    if r.random_bool(0.5) {
        let m = r.random_range(1..=3);
        let spec = random_redundancy(&mut r, n, m);
        OiInstance { name: format!("redundancy-{seed}"), spec: redundancy_to_oi(&spec), truncation }
    } else {
        let nu: Vec<f64> = (0..n).map(|_| r.random_range(0.2..1.5)).collect();
        let c = r.random_range(0.5..2.0);
        let k = r.random_range(1..=3) as f64;
        let spec = OISpec::new(nu, move |x| c * (x.total() as f64).min(k));
        OiInstance { name: format!("multiserver-{seed}"), spec, truncation }
    }
}

/// Random probability vector with `k` entries scaled to sum to `total`.
fn split(r: &mut impl Rng, k: usize, total: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z * total).collect()
}

/// Random class-preserving routing in which every label can leave the network.
fn random_routing(r: &mut impl Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    let d = 1 + n * m;
    let mut p = vec![vec![0.0; d]; d];
    let class_share = split(r, n, 1.0);
    for i in 0..n {
        let entry = split(r, m, class_share[i]);
        for k in 0..m {
            p[0][1 + i * m + k] = entry[k];
        }
        for k in 0..m {
            let row = 1 + i * m + k;
            let exit = r.random_range(0.2..1.0);
            p[row][0] = exit;
            let moves = split(r, m, 1.0 - exit);
            for l in 0..m {
                p[row][1 + i * m + l] = moves[l];
            }
        }
    }
    p
}

/// Number of label matrices whose class totals lie in the set.
fn label_count(totals: &FerrersSet, m: usize) -> usize {
    let per_class = |c: u32| -> usize {
        // compositions of c into m nonnegative parts
        let (a, b) = (c as u64 + m as u64 - 1, m as u64 - 1);
        ((a - b + 1)..=a).product::<u64>() as usize / (1..=b).product::<u64>().max(1) as usize
    };
    totals.iter().map(|x| x.as_slice().iter().map(|&c| per_class(c)).product::<usize>()).sum()
}

/// `Φ(s) = (|s|! / Π s_l!) c^{-|s|}`, which gives processor-sharing rates `φ_0 c s_l / |s|`.
fn sharing_phi(c: f64) -> PhiSpec {
    PhiSpec::Custom(Arc::new(move |s: &[u32]| {
        let total: u32 = s.iter().sum();
        let mut v = (1..=total).map(|k| k as f64 / c).product::<f64>();
        for &x in s {
            v /= (1..=x).map(|k| k as f64).product::<f64>();
        }
        v
    }))
}

/// Random balanced Whittle network with at most [`MAX_MICROSTATES`] states.
pub fn random_whittle(seed: u64) -> WhittleInstance {
    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let m = r.random_range(1..=3);
    let p = random_routing(&mut r, n, m);
    let phi0 = r.random_range(0.5..2.0);
    let big_phi = match r.random_range(0..3) {
        0 => PhiSpec::Unit,
        1 => PhiSpec::InverseFactorial,
        _ => sharing_phi(r.random_range(1.0..3.0)),
    };
    let mut cap = 1;
    while cap < 6 && label_count(&FerrersSet::total_cap(n, cap + 1), m) <= MAX_MICROSTATES {
        cap += 1;
    }
    let spec = WhittleSpec { n, m, p, phi0, phi: ServiceRate::FromBalance, big_phi: Some(big_phi) };
    WhittleInstance { name: format!("whittle-{seed}"), spec, totals: FerrersSet::total_cap(n, cap) }
}

/// Three-station tandem with balanced constant rates.
pub fn tandem_instance() -> WhittleInstance {
    WhittleInstance { name: "tandem".into(), spec: tandem(3, 1.2, 1.2), totals: FerrersSet::boxed(&[6]) }
}

/// Two classes on two stations with feedback loops and infinite-server rates.
pub fn feedback_instance() -> WhittleInstance {
    let p = vec![
        vec![0.0, 0.3, 0.2, 0.25, 0.25],
        vec![0.5, 0.0, 0.5, 0.0, 0.0],
        vec![0.4, 0.6, 0.0, 0.0, 0.0],
        vec![0.3, 0.0, 0.0, 0.2, 0.5],
        vec![0.6, 0.0, 0.0, 0.4, 0.0],
    ];
    let spec = WhittleSpec { n: 2, m: 2, p, phi0: 1.5, phi: ServiceRate::FromBalance, big_phi: Some(PhiSpec::InverseFactorial) };
    WhittleInstance { name: "feedback".into(), spec, totals: FerrersSet::total_cap(2, 4) }
}

/// Fixed OI corpus of `count` instances.
pub fn oi_corpus(count: usize) -> Vec<OiInstance> {
    (0..count as u64).map(|k| random_oi(1000 + k)).collect()
}

/// Fixed Whittle corpus: the tandem and feedback networks followed by random ones.
pub fn whittle_corpus(count: usize) -> Vec<WhittleInstance> {
    let mut v = vec![tandem_instance(), feedback_instance()];
    v.extend((0..count.saturating_sub(2) as u64).map(|k| random_whittle(2000 + k)));
    v.truncate(count);
    v
}

/// Random down-closed subset of `[0, limit]^n` with at most `max_points` points.
pub fn random_ferrers(r: &mut impl Rng, n: usize, limit: u32, max_points: usize) -> FerrersSet {
    loop {
        let corners: Vec<Vec<u32>> =
            (0..r.random_range(1..=3)).map(|_| (0..n).map(|_| r.random_range(0..=limit)).collect()).collect();
        let boxed = FerrersSet::boxed(&vec![limit; n]);
        let set = boxed
            .filter(|x| corners.iter().any(|c| x.as_slice().iter().zip(c).all(|(a, b)| a <= b)))
            .expect("union of boxes is down-closed");
        if set.len() <= max_points {
            return set;
        }
    }
}

/// Three random balance-function families on a domain: static, size-based and cumulative product.
pub fn random_families(r: &mut impl Rng, domain: &FerrersSet) -> Vec<(String, Family)> {
    let n = domain.dim();
    let depth = domain.iter().map(Macrostate::total).max().unwrap_or(0) as usize;
    vec![
        ("static".into(), Family::Static { alpha: (0..n).map(|_| r.random_range(0.3..1.0)).collect() }),
        ("size_based".into(), Family::SizeBased { psi: (0..depth).map(|_| r.random_range(0.3..1.0)).collect() }),
        ("cum_prod".into(), Family::CumProd { psi: (0..domain.len()).map(|_| r.random_range(0.5..1.0)).collect() }),
    ]
}

/// Random nonincreasing balance function on a random domain of dimension at most 3.
pub fn random_monotone_gamma(seed: u64, max_points: usize) -> Result<BalanceFunction> {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let limit = [0, 20, 7, 3][n];
    let domain = random_ferrers(&mut r, n, limit, max_points);
    let mut psi: Vec<f64> = (0..domain.len()).map(|_| r.random_range(0.0..1.0)).collect();
    // exact ones and repeated values exercise the tie-breaking of the peeling
    let ones = r.random_range(0..=psi.len() / 4);
    let mut idx: Vec<usize> = (0..psi.len()).collect();
    idx.shuffle(&mut r);
    for &k in idx.iter().take(ones) {
        psi[k] = 1.0;
    }
    crate::balance::make_family(&Family::CumProd { psi }, &domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oiqueue::build_oi_system;
    use crate::whittle::build_whittle_system;

    #[test]
    fn corpus_sizes_respect_the_cap() {
        for inst in oi_corpus(12) {
            let sys = build_oi_system(&inst.spec, &inst.truncation).unwrap();
            assert!(sys.n_states() <= MAX_MICROSTATES, "{}", inst.name);
            assert_eq!(sys.n_states(), word_count(&inst.truncation));
        }
        for inst in whittle_corpus(12) {
            let sys = build_whittle_system(&inst.spec, &inst.truncation()).unwrap();
            assert!(sys.n_states() <= MAX_MICROSTATES, "{}", inst.name);
            assert_eq!(sys.n_states(), label_count(&inst.totals, inst.spec.m));
        }
    }

    #[test]
    fn monotone_gammas_fit() {
        for s in 0..20 {
            let g = random_monotone_gamma(s, 64).unwrap();
            assert!(g.domain().len() <= 64);
        }
    }
}
