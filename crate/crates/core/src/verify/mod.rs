//! Invariant suites run by `qrqueue verify`.

pub mod corpus;

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{
    check_balance_condition, decompose_vertex, make_family, policy_from_balance, verify_theorem1,
    BalanceFunction, MacroPolicy, ThetaFamily, ThetaParam,
};
use crate::control::{best_balanced, enumerate_masks_2d, mask_gain_slow, optimal_policy, toy_example, ToyId};
use crate::error::{QrError, Result};
use crate::oiqueue::{build_oi_system, oi_product_form, RedundancySpec, Word};
use crate::qrcore::{
    aggregate_macro_kernel, check_quasi_reversibility, solve_stationary, validate_assumption1, FerrersSet, Macrostate,
    QueueSystem,
};
use crate::rl::ExactModel;
use crate::whittle::{build_whittle_system, check_equivalence, solve_traffic, whittle_product_form};
use corpus::{oi_corpus, MAX_EQUIVALENCE_WORDS, random_families, random_monotone_gamma, whittle_corpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Core,
    Balance,
    Models,
    Gradients,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Core, Suite::Balance, Suite::Models, Suite::Gradients];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Core => "core",
            Suite::Balance => "balance",
            Suite::Models => "models",
            Suite::Gradients => "gradients",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|s| s.name() == text)
            .ok_or_else(|| QrError::Parse(format!("unknown suite {text:?}, expected one of core, balance, models, gradients")))
    }
}

/// One measured quantity and the bound it must not exceed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check { name: name.into(), value, bound, passed: value <= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// CSV with header `suite,check,value,bound,passed`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "suite,check,value,bound,passed")?;
        }
        for c in &self.checks {
            writeln!(w, "{},{},{:e},{:e},{}", self.suite.name(), c.name, c.value, c.bound, c.passed)?;
        }
        Ok(())
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {}/{}: {:.3e} (bound {:.0e})", self.suite.name(), c.name, c.value, c.bound)?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Core => core_suite()?,
        Suite::Balance => balance_suite()?,
        Suite::Models => models_suite()?,
        Suite::Gradients => gradients_suite()?,
    };
    Ok(SuiteReport { suite, checks })
}

const TOL: f64 = 1e-9;

/// Unichain assumption, global balance and partial balance of a user-supplied system.
pub fn model_checks(sys: &QueueSystem) -> Result<Vec<Check>> {
    let violations = validate_assumption1(sys).violations.len() as f64;
    let pi = solve_stationary(sys)?;
    let qr = check_quasi_reversibility(sys, &pi, TOL)?;
    Ok(vec![
        Check::at_most("model_assumption_violations", violations, 0.0),
        Check::at_most("model_global_balance_residual", qr.global_residual, TOL),
        Check::at_most("model_partial_balance_residual", qr.max_residual, TOL),
    ])
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

/// Every corpus system without control: OI instances then Whittle instances.
fn corpus_systems() -> Result<Vec<QueueSystem>> {
    let mut out = Vec::new();
    for inst in oi_corpus(12) {
        out.push(build_oi_system(&inst.spec, &inst.truncation)?);
    }
    for inst in whittle_corpus(10) {
        out.push(build_whittle_system(&inst.spec, &inst.truncation())?);
    }
    Ok(out)
}

fn core_suite() -> Result<Vec<Check>> {
    let systems = corpus_systems()?;
    let stats = systems
        .par_iter()
        .map(|sys| {
            let violations = validate_assumption1(sys).violations.len() as f64;
            let pi = solve_stationary(sys)?;
            let qr = check_quasi_reversibility(sys, &pi, TOL)?;
            let chain = aggregate_macro_kernel(sys, &pi)?;
            Ok([violations, qr.global_residual, qr.max_residual, chain.detailed_balance_residual])
        })
        .collect::<Result<Vec<[f64; 4]>>>()?;
    let col = |k: usize| max_of(stats.iter().map(|s| s[k]));
    let bellman = ToyId::ALL
        .par_iter()
        .map(|&id| Ok(optimal_policy(&toy_example(id, 0.1, 0.1)?)?.bellman_residual))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vec![
        Check::at_most("assumption_violations", col(0), 0.0),
        Check::at_most("global_balance_residual", col(1), TOL),
        Check::at_most("partial_balance_residual", col(2), TOL),
        Check::at_most("macro_detailed_balance_residual", col(3), TOL),
        Check::at_most("toy_bellman_residual", max_of(bellman), TOL),
    ])
}

fn balance_suite() -> Result<Vec<Check>> {
    let systems = corpus_systems()?;
    let controlled = systems
        .par_iter()
        .enumerate()
        .map(|(k, sys)| {
            let mut r = ChaCha8Rng::seed_from_u64(3000 + k as u64);
            let mut worst = [0.0f64; 3];
            for (_, family) in random_families(&mut r, sys.image()) {
                let gamma = make_family(&family, sys.image())?;
                let rep = verify_theorem1(sys, &gamma, TOL)?;
                let policy = policy_from_balance(&gamma)?;
                let balanced = check_balance_condition(&policy.policy, 1e-12).balanced;
                worst[0] = worst[0].max(rep.linf);
                worst[1] = worst[1].max(rep.controlled.max_residual);
                worst[2] += (!balanced) as u8 as f64;
            }
            Ok(worst)
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;

    // A policy violating the path-product condition must be detected.
    let domain = FerrersSet::boxed(&[2, 2]);
    let skewed = MacroPolicy::from_fn(domain, |x, i| if i == 0 && x.get(1) == 1 { 0.3 } else { 0.8 })?;
    let missed = check_balance_condition(&skewed, 1e-12).balanced as u8 as f64;

    let decomp = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let gamma = random_monotone_gamma(s, 64)?;
            Ok(decomposition_errors(&gamma))
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;

    let small = FerrersSet::boxed(&[2, 2]);
    let masks = enumerate_masks_2d(&small)?;
    let restricted = problem_on(&small)?;
    let (_, fast_small) = best_balanced(&restricted)?;
    let slow_small = masks.iter().map(|m| mask_gain_slow(&restricted, m)).collect::<Result<Vec<f64>>>()?;
    let slow_best = slow_small.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    Ok(vec![
        Check::at_most("controlled_product_form_linf", max_of(controlled.iter().map(|w| w[0])), TOL),
        Check::at_most("controlled_partial_balance_residual", max_of(controlled.iter().map(|w| w[1])), TOL),
        Check::at_most("families_not_balanced", controlled.iter().map(|w| w[2]).sum(), 0.0),
        Check::at_most("imbalanced_policy_accepted", missed, 0.0),
        Check::at_most("decomposition_negative_coefficient", max_of(decomp.iter().map(|d| d[0])), 1e-14),
        Check::at_most("decomposition_sum_error", max_of(decomp.iter().map(|d| d[1])), 1e-12),
        Check::at_most("decomposition_reconstruction", max_of(decomp.iter().map(|d| d[2])), 1e-12),
        Check::at_most("best_balanced_vs_enumeration", (fast_small - slow_best).abs(), 1e-10),
    ])
}

/// The realistic example restricted to a smaller box, for exhaustive comparison.
fn problem_on(domain: &FerrersSet) -> Result<crate::control::AdmissionProblem> {
    use crate::control::{processor_sharing, AdmissionProblem, RewardSpec};
    let cap = domain.max_coord(0);
    let sys = processor_sharing([0.3, 0.2], cap)?;
    let rewards = RewardSpec::from_fns(
        &sys,
        |s| -(sys.counting(s).total() as f64),
        |s, t| {
            let (a, b) = (sys.counting(s), sys.counting(t));
            match (b.get(0) as i64 - a.get(0) as i64, b.get(1) as i64 - a.get(1) as i64) {
                (1, 0) => 3.0,
                (0, 1) => 6.0,
                _ => 0.0,
            }
        },
    );
    AdmissionProblem::new(sys, rewards)
}

/// `[max negative coefficient, |Σα - 1|, reconstruction L∞]` of the greedy decomposition.
pub fn decomposition_errors(gamma: &BalanceFunction) -> [f64; 3] {
    let d = decompose_vertex(gamma);
    let neg = d.coefficients.iter().map(|a| (-a).max(0.0)).fold(0.0, f64::max);
    let sum = (d.coefficients.iter().sum::<f64>() - 1.0).abs();
    let recon = gamma.domain().iter().map(|x| (d.evaluate(x) - gamma.value(x)).abs()).fold(0.0, f64::max);
    [neg, sum, recon]
}

fn linf_normalized(a: &[f64], b: &[f64]) -> f64 {
    let za: f64 = a.iter().sum();
    let zb: f64 = b.iter().sum();
    a.iter().zip(b).map(|(x, y)| (x / za - y / zb).abs()).fold(0.0, f64::max)
}

fn models_suite() -> Result<Vec<Check>> {
    let oi = oi_corpus(12)
        .par_iter()
        .map(|inst| {
            let sys = build_oi_system(&inst.spec, &inst.truncation)?;
            let pi = solve_stationary(&sys)?;
            let pf = (0..sys.n_states())
                .map(|s| oi_product_form(&inst.spec, &Word::from_key(sys.key(s))))
                .collect::<Result<Vec<f64>>>()?;
            let qr = check_quasi_reversibility(&sys, &pi, TOL)?;
            Ok([linf_normalized(&pf, &pi.values), qr.max_residual])
        })
        .collect::<Result<Vec<[f64; 2]>>>()?;

    let whittle = whittle_corpus(10)
        .par_iter()
        .map(|inst| {
            let spec = &inst.spec;
            let sys = build_whittle_system(spec, &inst.truncation())?;
            let pi = solve_stationary(&sys)?;
            let lambda = solve_traffic(spec)?;
            let pf = (0..sys.n_states())
                .map(|s| whittle_product_form(spec, &lambda, sys.key(s)))
                .collect::<Result<Vec<f64>>>()?;
            let traffic = (0..spec.labels())
                .map(|l| {
                    let inflow: f64 = (0..spec.labels()).map(|k| lambda[k] * spec.route(Some(k), Some(l))).sum();
                    (lambda[l] - spec.route(None, Some(l)) - inflow).abs()
                })
                .fold(0.0, f64::max);
            let qr = check_quasi_reversibility(&sys, &pi, TOL)?;
            let mut r = ChaCha8Rng::seed_from_u64(4000 + inst.name.len() as u64);
            let alpha = (0..spec.n).map(|_| r.random_range(0.4..1.0)).collect();
            let gamma = make_family(&crate::balance::Family::Static { alpha }, &inst.totals)?;
            let eq = if inst.oi_word_count()? <= MAX_EQUIVALENCE_WORDS {
                check_equivalence(spec, &gamma, TOL)?.l1
            } else {
                0.0
            };
            Ok([linf_normalized(&pf, &pi.values), traffic, qr.max_residual, eq])
        })
        .collect::<Result<Vec<[f64; 4]>>>()?;

    let partial = max_of(oi.iter().map(|v| v[1]).chain(whittle.iter().map(|v| v[2])));
    Ok(vec![
        Check::at_most("oi_product_form_linf", max_of(oi.iter().map(|v| v[0])), TOL),
        Check::at_most("whittle_product_form_linf", max_of(whittle.iter().map(|v| v[0])), TOL),
        Check::at_most("traffic_equation_residual", max_of(whittle.iter().map(|v| v[1])), 1e-12),
        Check::at_most("oi_whittle_equivalence_l1", max_of(whittle.iter().map(|v| v[3])), TOL),
        Check::at_most("max_partial_balance_residual", partial, TOL),
    ])
}

/// Light three-class redundancy system whose words of length at most 8 carry
/// all but `1e-8` of the stationary mass.
pub fn gradient_spec() -> RedundancySpec {
    RedundancySpec {
        nu: vec![0.3, 0.3, 0.3],
        zeta: vec![1.0, 1.0, 1.0],
        mu: vec![1.0, 1.0, 1.0],
        r: vec![1.0, 2.0, 4.0],
        b: vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]],
    }
}

pub const GRADIENT_CAP: u32 = 8;

/// Parameter points at which the gradient identities are checked.
pub fn gradient_points(model: &ExactModel) -> Vec<ThetaParam> {
    let mut r = ChaCha8Rng::seed_from_u64(5000);
    let n = model.spec().n_classes();
    let mut out = Vec::new();
    for family in [ThetaFamily::Static, ThetaFamily::SemiStatic, ThetaFamily::DynamicCumProd] {
        let mut p = ThetaParam::new(family, n);
        model.materialize(&mut p);
        for v in p.theta_mut() {
            *v += r.random_range(-1.0..1.0);
        }
        out.push(p);
    }
    out
}

/// Coordinates probed by finite differences: all of them, or 12 spread out for large families.
pub fn probe_coordinates(param: &ThetaParam) -> Vec<usize> {
    let d = param.dim();
    if d <= 12 {
        (0..d).collect()
    } else {
        (0..12).map(|k| k * (d - 1) / 11).collect()
    }
}

/// `‖a - b‖∞ / ‖b‖∞`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn shifted(param: &ThetaParam, k: usize, h: f64) -> ThetaParam {
    let mut p = param.clone();
    p.theta_mut()[k] += h;
    p
}

const FD_STEP: f64 = 1e-5;

/// Largest relative errors of `∇ log Π_θ` and `∇ G_θ` against central differences,
/// and the largest `|E_{Π_θ}[∇ log Π_θ]|`.
pub fn gradient_errors(model: &ExactModel, param: &ThetaParam) -> Result<[f64; 3]> {
    let n = model.spec().n_classes();
    let coords = probe_coordinates(param);
    let probes = [Word::empty(), Word(vec![2]), Word(vec![0, 1]), Word(vec![2, 0, 2, 1])];
    let mut log_pi_err = 0.0f64;
    for w in &probes {
        let k = model.index_of(w).expect("probe word inside the truncation");
        let exact = model.log_pi_gradient(param, w)?;
        let fd = coords
            .iter()
            .map(|&j| {
                let up = model.stationary(&shifted(param, j, FD_STEP))?[k].ln();
                let down = model.stationary(&shifted(param, j, -FD_STEP))?[k].ln();
                Ok((up - down) / (2.0 * FD_STEP))
            })
            .collect::<Result<Vec<f64>>>()?;
        let ex: Vec<f64> = coords.iter().map(|&j| exact[j]).collect();
        log_pi_err = log_pi_err.max(relative_error(&ex, &fd));
    }

    let exact = model.gain_gradient(param)?;
    let fd = coords
        .iter()
        .map(|&j| {
            let up = model.gain(&shifted(param, j, FD_STEP))?;
            let down = model.gain(&shifted(param, j, -FD_STEP))?;
            Ok((up - down) / (2.0 * FD_STEP))
        })
        .collect::<Result<Vec<f64>>>()?;
    let ex: Vec<f64> = coords.iter().map(|&j| exact.gradient[j]).collect();
    let gain_err = relative_error(&ex, &fd);

    // Words with equal counts share the score, so aggregate by macrostate.
    let pi = model.stationary(param)?;
    let mut mass: Vec<(Macrostate, Word, f64)> = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (k, w) in model.words().iter().enumerate() {
        let x = w.counts(n);
        match seen.get(&x) {
            Some(&slot) => {
                let entry: &mut (Macrostate, Word, f64) = &mut mass[slot];
                entry.2 += pi[k];
            }
            None => {
                seen.insert(x.clone(), mass.len());
                mass.push((x, w.clone(), pi[k]));
            }
        }
    }
    let mut mean = vec![0.0; param.dim()];
    for (_, w, p) in &mass {
        for (a, g) in mean.iter_mut().zip(model.log_pi_gradient(param, w)?) {
            *a += p * g;
        }
    }
    let score = mean.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok([log_pi_err, gain_err, score])
}

fn gradients_suite() -> Result<Vec<Check>> {
    let model = ExactModel::new(&gradient_spec(), GRADIENT_CAP)?;
    let errors = gradient_points(&model)
        .par_iter()
        .map(|p| gradient_errors(&model, p))
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let small = ExactModel::new(&gradient_spec(), 2)?;
    let p = ThetaParam::new(ThetaFamily::Static, 3);
    let enforced = matches!(small.gain_gradient(&p), Err(QrError::TruncationTooSmall { .. }));
    Ok(vec![
        Check::at_most("log_pi_gradient_rel_error", max_of(errors.iter().map(|e| e[0])), 1e-5),
        Check::at_most("max_fd_rel_error", max_of(errors.iter().map(|e| e[1])), 1e-4),
        Check::at_most("mean_score", max_of(errors.iter().map(|e| e[2])), 1e-10),
        Check::at_most("truncation_not_enforced", if enforced { 0.0 } else { 1.0 }, 0.0),
    ])
}
