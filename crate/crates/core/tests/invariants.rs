//! Property tests over randomly generated models.

use proptest::prelude::*;

use qrqueue::balance::{decompose_vertex, make_family, policy_from_balance, apply_control, BalanceFunction, Family, ThetaFamily, ThetaParam};
use qrqueue::control::{best_balanced, export_lp, gain, optimal_policy, LpProblem, LpVariant, PolicyTable, ToyId, toy_example, mask_solution};
use qrqueue::oiqueue::{build_oi_system, OISpec, RedundancySpec, Word};
use qrqueue::qrcore::{solve_stationary, FerrersSet, Macrostate, QueueSystemBuilder, TransitionKind};
use qrqueue::verify::corpus::random_monotone_gamma;

fn birth_death(rates: &[(f64, f64)]) -> qrqueue::qrcore::QueueSystem {
    let mut b = QueueSystemBuilder::new(1);
    for k in 0..=rates.len() as u32 {
        b.add_state(vec![k], Macrostate(vec![k])).unwrap();
    }
    for (k, &(up, down)) in rates.iter().enumerate() {
        let k = k as u32;
        b.add_typed_edge(vec![k], vec![k + 1], up, TransitionKind::Arrival(0)).unwrap();
        b.add_typed_edge(vec![k + 1], vec![k], down, TransitionKind::Departure(0)).unwrap();
    }
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn birth_death_stationary_matches_detailed_balance(rates in prop::collection::vec((0.05f64..5.0, 0.05f64..5.0), 1..12)) {
        let sys = birth_death(&rates);
        let pi = solve_stationary(&sys).unwrap().values;
        let mut w = vec![1.0];
        for &(up, down) in &rates {
            w.push(w.last().unwrap() * up / down);
        }
        let z: f64 = w.iter().sum();
        for (k, v) in w.iter().enumerate() {
            prop_assert!((v / z - pi[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_reconstructs_monotone_functions(seed in 0u64..10_000) {
        let gamma = random_monotone_gamma(seed, 64).unwrap();
        let d = decompose_vertex(&gamma);
        prop_assert!(d.coefficients.iter().all(|&a| a >= 0.0));
        prop_assert!((d.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for x in gamma.domain().iter() {
            prop_assert!((d.evaluate(x) - gamma.value(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn balance_function_json_round_trips(seed in 0u64..10_000) {
        let gamma = random_monotone_gamma(seed, 64).unwrap();
        let back = BalanceFunction::from_json(&gamma.to_json()).unwrap();
        prop_assert_eq!(back.domain(), gamma.domain());
        for (a, b) in back.values().iter().zip(gamma.values()) {
            prop_assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn static_control_of_multiserver_queue_is_product_form(
        nu in prop::collection::vec(0.1f64..2.0, 1..3),
        alpha in prop::collection::vec(0.05f64..1.0, 2),
        c in 0.3f64..3.0,
        cap in 1u32..5,
    ) {
        let n = nu.len();
        let spec = OISpec::new(nu.clone(), move |x| c * (x.total() as f64).min(2.0));
        let domain = FerrersSet::total_cap(n, cap);
        let sys = build_oi_system(&spec, &domain).unwrap();
        let base = solve_stationary(&sys).unwrap().values;
        let gamma = make_family(&Family::Static { alpha: alpha[..n].to_vec() }, &domain).unwrap();
        let policy = policy_from_balance(&gamma).unwrap();
        let controlled = solve_stationary(&apply_control(&sys, &policy.policy).unwrap()).unwrap().values;
        let weights: Vec<f64> = (0..sys.n_states()).map(|s| base[s] * gamma.value(sys.counting(s))).collect();
        let z: f64 = weights.iter().sum();
        for (w, p) in weights.iter().zip(&controlled) {
            prop_assert!((w / z - p).abs() < 1e-10);
        }
    }

    #[test]
    fn admission_probabilities_are_probabilities(
        theta in prop::collection::vec(-20.0f64..20.0, 3),
        word in prop::collection::vec(0u32..3, 0..8),
        class in 0usize..3,
    ) {
        let mut p = ThetaParam::from_theta(ThetaFamily::Static, 3, theta).unwrap();
        let w = Word(word);
        let x = w.counts(3);
        p.materialize(&w.key(), &x);
        let a = p.admit_prob(&w.key(), &x, class);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn words_parse_back(word in prop::collection::vec(0u32..9, 0..10)) {
        let w = Word(word);
        let text = w.to_string();
        prop_assert_eq!(Word::parse(&text).unwrap(), w);
    }
}

#[test]
fn optimal_gain_dominates_every_balanced_mask() {
    for id in ToyId::ALL {
        let problem = toy_example(id, 0.3, 0.2).unwrap();
        let opt = optimal_policy(&problem).unwrap();
        let (mask, g) = best_balanced(&problem).unwrap();
        assert!(opt.gain >= g - 1e-12, "{id:?}");
        let probs = (0..problem.system().n_states())
            .map(|s| {
                let x = problem.system().counting(s);
                (0..2).map(|i| if mask.contains(x) && mask.contains(&x.plus(i)) { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        assert!((gain(&problem, &PolicyTable::new(probs).unwrap()).unwrap() - g).abs() < 1e-12);
    }
}

#[test]
fn exported_lps_parse_and_accept_the_mask_solution() {
    let problem = toy_example(ToyId::Realistic, 0.1, 0.1).unwrap();
    let (mask, g) = best_balanced(&problem).unwrap();
    for variant in LpVariant::ALL {
        let text = export_lp(&problem, variant).unwrap();
        let lp = LpProblem::parse(&text).unwrap();
        assert!(!lp.variables().is_empty(), "{variant:?}");
        if variant == LpVariant::Balanced {
            let sol = mask_solution(&problem, &mask);
            assert!(lp.max_violation(&sol) < 1e-9);
            assert!((lp.objective_value(&sol) - g).abs() < 1e-9);
        }
    }
}

#[test]
fn redundancy_spec_rejects_bad_input() {
    assert!(RedundancySpec::from_json("{").is_err());
    let mut s = RedundancySpec::adversarial();
    s.nu[0] = -1.0;
    assert!(s.validate().is_err());
    let mut s = RedundancySpec::adversarial();
    s.b[0] = vec![0; s.n_servers()];
    assert!(s.validate().is_err());
}
