//! Simulators against exact answers.

use qrqueue::oiqueue::{RedundancySpec, Word};
use qrqueue::qrcore::{solve_stationary, Macrostate, QueueSystem, QueueSystemBuilder, TransitionKind};
use qrqueue::rl::{run_ac, run_q, run_sage, AcConfig, QConfig, RunSpec, SageConfig};
use qrqueue::balance::ThetaFamily;
use qrqueue::simenv::{simulate_ctmc, EnvState, RedundancyEnv, SimConfig};

fn mm1k(lambda: f64, mu: f64, k: u32) -> QueueSystem {
    let mut b = QueueSystemBuilder::new(1);
    for j in 0..=k {
        b.add_state(vec![j], Macrostate(vec![j])).unwrap();
    }
    for j in 0..k {
        b.add_typed_edge(vec![j], vec![j + 1], lambda, TransitionKind::Arrival(0)).unwrap();
        b.add_typed_edge(vec![j + 1], vec![j], mu, TransitionKind::Departure(0)).unwrap();
    }
    b.build().unwrap()
}

#[test]
fn ctmc_occupation_matches_stationary_distribution() {
    let sys = mm1k(0.8, 1.0, 5);
    let pi = solve_stationary(&sys).unwrap().values;
    // batch means over independent seeds
    let batches: Vec<Vec<f64>> = (0..20)
        .map(|seed| {
            simulate_ctmc(&sys, &SimConfig { seed, horizon_events: 20_000, record_stride: 1000 })
                .unwrap()
                .empirical_distribution()
        })
        .collect();
    for s in 0..sys.n_states() {
        let mean = batches.iter().map(|b| b[s]).sum::<f64>() / 20.0;
        let var = batches.iter().map(|b| (b[s] - mean).powi(2)).sum::<f64>() / 19.0;
        let se = (var / 20.0).sqrt();
        assert!((mean - pi[s]).abs() < 4.0 * se + 1e-3, "state {s}: {mean} vs {}", pi[s]);
    }
}

#[test]
fn ctmc_is_reproducible_and_records_with_stride() {
    let sys = mm1k(1.0, 1.0, 3);
    let cfg = SimConfig { seed: 5, horizon_events: 1000, record_stride: 10 };
    let a = simulate_ctmc(&sys, &cfg).unwrap();
    assert_eq!(a, simulate_ctmc(&sys, &cfg).unwrap());
    assert_eq!(a.events.len(), 100);
    assert!(a.events.windows(2).all(|w| w[0].time <= w[1].time));
    assert!(simulate_ctmc(&sys, &SimConfig { horizon_events: 0, ..cfg }).is_err());
}

#[test]
fn arrival_classes_follow_arrival_rates() {
    let spec = RedundancySpec::non_adversarial();
    let total: f64 = spec.nu.iter().sum();
    let mut env = RedundancyEnv::new(spec.clone(), 3, 0).unwrap();
    let mut counts = vec![0.0; spec.n_classes()];
    let n = 60_000;
    for _ in 0..n {
        counts[env.reset().incoming_class] += 1.0;
    }
    for (c, nu) in counts.iter().zip(&spec.nu) {
        let p = nu / total;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((c / n as f64 - p).abs() < 5.0 * se, "{c} vs {p}");
    }
}

#[test]
fn environment_is_deterministic_per_seed_and_stream() {
    let spec = RedundancySpec::adversarial();
    let trace = |seed, stream| {
        let mut env = RedundancyEnv::new(spec.clone(), seed, stream).unwrap();
        (0..500).map(|k| env.step(k % 3 != 0).reward).collect::<Vec<f64>>()
    };
    assert_eq!(trace(1, 0), trace(1, 0));
    assert_ne!(trace(1, 0), trace(1, 1));
    assert_ne!(trace(1, 0), trace(2, 0));
}

#[test]
fn rejecting_everything_keeps_the_system_empty() {
    let mut env = RedundancyEnv::new(RedundancySpec::adversarial(), 0, 0).unwrap();
    for _ in 0..1000 {
        let out = env.step(false);
        assert_eq!(out.reward, 0.0);
        assert!(out.next.word.is_empty());
    }
}

#[test]
fn set_state_validates_classes() {
    let mut env = RedundancyEnv::new(RedundancySpec::adversarial(), 0, 0).unwrap();
    assert!(env.set_state(EnvState { word: Word(vec![0, 1]), incoming_class: 2 }).is_ok());
    assert!(env.set_state(EnvState { word: Word(vec![7]), incoming_class: 0 }).is_err());
    assert!(env.set_state(EnvState { word: Word::empty(), incoming_class: 9 }).is_err());
}

#[test]
fn learners_are_reproducible_and_log_every_stride() {
    let spec = RunSpec { env: RedundancySpec::non_adversarial(), seed: 4, stream: 0, total_steps: 5_000, record_stride: Some(500) };
    let a = run_sage(&spec, ThetaFamily::DynamicCumProd, &SageConfig::default()).unwrap();
    let b = run_sage(&spec, ThetaFamily::DynamicCumProd, &SageConfig::default()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.records.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=10).map(|k| k * 500).collect::<Vec<_>>());
    for log in [
        run_ac(&spec, ThetaFamily::SemiStatic, &AcConfig::default()).unwrap(),
        run_q(&spec, &QConfig::default()).unwrap(),
    ] {
        assert_eq!(log.records.last().unwrap().step, 5_000);
        assert!(log.records.iter().all(|r| r.mean_reward.is_finite()));
    }
    let empty = run_q(&RunSpec { total_steps: 0, ..spec }, &QConfig::default()).unwrap();
    assert!(empty.records.is_empty());
}
