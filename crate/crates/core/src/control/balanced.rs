use rayon::prelude::*;
use serde::Serialize;

use super::lp::balanced_terms;
use super::mdp::{optimal_policy, worst_gain};
use super::problem::{gain, toy_example, AdmissionProblem, PolicyTable, ToyId};
use crate::balance::{policy_from_balance, BalanceFunction};
use crate::error::{QrError, Result};
use crate::qrcore::{FerrersSet, Macrostate};

/// Largest number of masks [`best_balanced`] is willing to enumerate.
pub const MASK_CAP: u128 = 1_000_000;

/// Per-macrostate terms of the balanced objective.
///
/// With `Γ_A = 1{x ∈ A} / Σ_{y∈A} Π(y)` the gain is `Σ_{x∈A} c(x) / Σ_{x∈A} w(x)`,
/// where `w(x)` is the base mass of `x` and `c(x)` collects the occupation
/// rewards and non-admission transition rewards out of `x` plus the admission
/// rewards into `x`.
struct MacroTerms {
    domain: FerrersSet,
    w: Vec<f64>,
    c: Vec<f64>,
}

impl MacroTerms {
    fn new(problem: &AdmissionProblem) -> Self {
        let (c, w) = balanced_terms(problem);
        MacroTerms { domain: problem.system().image().clone(), w, c }
    }

    fn objective(&self, mask: &FerrersSet) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for x in mask.iter() {
            let k = self
                .domain
                .index_of(x)
                .ok_or_else(|| QrError::DomainMismatch(format!("mask point {x} outside the state space")))?;
            num += self.c[k];
            den += self.w[k];
        }
        Ok(num / den)
    }
}

/// Closed-form gain of the deterministic balanced policy that confines the system to `mask`.
pub fn balanced_objective(problem: &AdmissionProblem, mask: &FerrersSet) -> Result<f64> {
    if mask.is_empty() || !mask.contains(&Macrostate::zeros(mask.dim())) {
        return Err(QrError::NotFerrers("mask must contain the empty state".into()));
    }
    MacroTerms::new(problem).objective(mask)
}

/// Gain of the same policy computed by controlling the system and solving for its distribution.
pub fn mask_gain_slow(problem: &AdmissionProblem, mask: &FerrersSet) -> Result<f64> {
    let domain = problem.system().image().clone();
    let gamma = BalanceFunction::from_fn(domain, |x| if mask.contains(x) { 1.0 } else { 0.0 })?;
    let policy = policy_from_balance(&gamma)?;
    gain(problem, &PolicyTable::from_macro(problem.system(), &policy.policy)?)
}

/// Column heights of a two-dimensional Ferrers set, indexed by the first coordinate.
fn column_heights(domain: &FerrersSet) -> Result<Vec<usize>> {
    if domain.dim() != 2 {
        return Err(QrError::Unsupported(format!(
            "mask enumeration needs two classes, got {}; use the LP export instead",
            domain.dim()
        )));
    }
    let mut h = vec![0usize; domain.max_coord(0) as usize + 1];
    for x in domain.iter() {
        h[x.get(0) as usize] += 1;
    }
    Ok(h)
}

/// Number of nonempty Ferrers subsets of a two-dimensional domain, saturating at `u128::MAX`.
pub fn count_masks_2d(domain: &FerrersSet) -> Result<u128> {
    let heights = column_heights(domain)?;
    // ways[h] = number of profiles for the remaining columns when the previous height is h
    let top = heights[0];
    let mut ways = vec![1u128; top + 1];
    for &cap in heights.iter().skip(1).rev() {
        let mut next = vec![0u128; top + 1];
        let mut acc = 0u128;
        for (prev, slot) in next.iter_mut().enumerate() {
            if prev <= cap {
                acc = acc.saturating_add(ways[prev]);
            }
            *slot = acc;
        }
        ways = next;
    }
    Ok(ways[1..].iter().fold(0u128, |a, &b| a.saturating_add(b)))
}

fn profile_to_mask(profile: &[usize]) -> FerrersSet {
    let points = profile
        .iter()
        .enumerate()
        .flat_map(|(c, &h)| (0..h).map(move |y| Macrostate(vec![c as u32, y as u32])));
    FerrersSet::new(2, points).expect("staircase profiles are Ferrers")
}

/// Visits every profile `h_c ≥ h_{c+1}` with `h_c ≤ heights[c]` extending `prefix`, in lexicographic order.
fn visit_profiles(heights: &[usize], prefix: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    let c = prefix.len();
    let prev = *prefix.last().expect("nonempty prefix");
    if c == heights.len() || prev == 0 {
        f(prefix);
        return;
    }
    for h in 0..=prev.min(heights[c]) {
        prefix.push(h);
        visit_profiles(heights, prefix, f);
        prefix.pop();
    }
}

/// All nonempty Ferrers subsets of a two-dimensional domain, in lexicographic profile order.
pub fn enumerate_masks_2d(domain: &FerrersSet) -> Result<Vec<FerrersSet>> {
    let heights = column_heights(domain)?;
    let count = count_masks_2d(domain)?;
    if count > MASK_CAP {
        return Err(QrError::SizeCap(format!("{count} masks exceed the cap of {MASK_CAP}; use the LP export instead")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for h0 in 1..=heights[0] {
        visit_profiles(&heights, &mut vec![h0], &mut |p| out.push(profile_to_mask(p)));
    }
    Ok(out)
}

/// Best deterministic balanced policy, as the Ferrers set it confines the system to.
///
/// Ties are broken in favour of the first mask in lexicographic profile order.
pub fn best_balanced(problem: &AdmissionProblem) -> Result<(FerrersSet, f64)> {
    let terms = MacroTerms::new(problem);
    let heights = column_heights(&terms.domain)?;
    let count = count_masks_2d(&terms.domain)?;
    if count > MASK_CAP {
        return Err(QrError::SizeCap(format!("{count} masks exceed the cap of {MASK_CAP}; use the LP export instead")));
    }
    // prefix sums along each column
    let mut cols_c = Vec::with_capacity(heights.len());
    let mut cols_w = Vec::with_capacity(heights.len());
    for (c, &h) in heights.iter().enumerate() {
        let (mut pc, mut pw) = (vec![0.0], vec![0.0]);
        for y in 0..h {
            let k = terms.domain.index_of(&Macrostate(vec![c as u32, y as u32])).expect("member");
            pc.push(pc[y] + terms.c[k]);
            pw.push(pw[y] + terms.w[k]);
        }
        cols_c.push(pc);
        cols_w.push(pw);
    }
    let per_first: Vec<Option<(f64, Vec<usize>)>> = (1..=heights[0])
        .into_par_iter()
        .map(|h0| {
            let mut best: Option<(f64, Vec<usize>)> = None;
            visit_profiles(&heights, &mut vec![h0], &mut |p| {
                let (mut num, mut den) = (0.0, 0.0);
                for (c, &h) in p.iter().enumerate() {
                    num += cols_c[c][h];
                    den += cols_w[c][h];
                }
                let g = num / den;
                if best.as_ref().is_none_or(|(b, _)| g > *b) {
                    best = Some((g, p.to_vec()));
                }
            });
            best
        })
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for cand in per_first.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| cand.0 > *b) {
            best = Some(cand);
        }
    }
    let (g, profile) = best.ok_or_else(|| QrError::Structural("state space has no masks".into()))?;
    Ok((profile_to_mask(&profile), g))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub g_opt: f64,
    pub g_balanced: f64,
    pub g_worst: f64,
    /// `100 (g_opt - g_balanced) / (g_opt - g_worst)`, absent when the denominator vanishes.
    pub loss_pct: Option<f64>,
    pub best_mask: FerrersSet,
}

pub fn loss(problem: &AdmissionProblem) -> Result<LossReport> {
    let g_opt = optimal_policy(problem)?.gain;
    let (best_mask, g_balanced) = best_balanced(problem)?;
    let g_worst = worst_gain(problem)?;
    let spread = g_opt - g_worst;
    let loss_pct = if spread.abs() > 1e-14 * g_opt.abs().max(g_worst.abs()).max(1e-300) {
        Some(100.0 * (g_opt - g_balanced) / spread)
    } else {
        None
    };
    Ok(LossReport { g_opt, g_balanced, g_worst, loss_pct, best_mask })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub nu1: f64,
    pub nu2: f64,
    pub g_opt: f64,
    pub g_balanced: f64,
    pub g_worst: f64,
    pub loss_pct: Option<f64>,
}

/// Loss of one example over the grid `nu1 × nu2`, in row-major order.
pub fn sweep(id: ToyId, nu1: &[f64], nu2: &[f64]) -> Result<Vec<SweepRow>> {
    let pairs: Vec<(f64, f64)> = nu1.iter().flat_map(|&a| nu2.iter().map(move |&b| (a, b))).collect();
    pairs
        .into_par_iter()
        .map(|(a, b)| {
            let r = loss(&toy_example(id, a, b)?)?;
            Ok(SweepRow {
                nu1: a,
                nu2: b,
                g_opt: r.g_opt,
                g_balanced: r.g_balanced,
                g_worst: r.g_worst,
                loss_pct: r.loss_pct,
            })
        })
        .collect()
}

/// CSV with header `nu1,nu2,g_opt,g_balanced,g_worst,loss_pct`; an undefined loss is written as `NaN`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("nu1,nu2,g_opt,g_balanced,g_worst,loss_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{}\n",
            r.nu1,
            r.nu2,
            r.g_opt,
            r.g_balanced,
            r.g_worst,
            r.loss_pct.map_or("NaN".to_string(), |v| format!("{v}"))
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_has_five_masks() {
        let d = FerrersSet::boxed(&[1, 1]);
        assert_eq!(count_masks_2d(&d).unwrap(), 5);
        assert_eq!(enumerate_masks_2d(&d).unwrap().len(), 5);
        // 12 choose 6 lattice paths minus the empty set
        assert_eq!(count_masks_2d(&FerrersSet::boxed(&[5, 5])).unwrap(), 923);
        assert!(count_masks_2d(&FerrersSet::boxed(&[1, 1, 1])).is_err());
    }

    #[test]
    fn closed_form_matches_slow_gain() {
        let p = toy_example(ToyId::Realistic, 0.3, 0.2).unwrap();
        for mask in enumerate_masks_2d(p.system().image()).unwrap().iter().step_by(37) {
            let fast = balanced_objective(&p, mask).unwrap();
            let slow = mask_gain_slow(&p, mask).unwrap();
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }
}

#[cfg(test)]
mod toy_tests {
    use super::*;

    fn check(id: ToyId, expected: f64) -> LossReport {
        let r = loss(&toy_example(id, 0.1, 0.1).unwrap()).unwrap();
        let pct = r.loss_pct.unwrap();
        assert!((pct - expected).abs() <= 0.05, "{id:?}: {pct}");
        assert!(r.g_opt >= r.g_balanced && r.g_balanced >= r.g_worst);
        r
    }

    #[test]
    fn path_reward_loss_and_mask() {
        let r = check(ToyId::PathReward, 0.82);
        let expected = FerrersSet::new(2, [[0, 0], [1, 0], [2, 0]].map(|v| Macrostate(v.to_vec()))).unwrap();
        assert_eq!(r.best_mask, expected);
    }

    #[test]
    fn corner_and_realistic_losses() {
        check(ToyId::CornerReward, 7.96);
        check(ToyId::Realistic, 0.26);
    }
}
