//! Parsers accept the fuzzing seeds and never panic on mangled input.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;

use qrqueue::balance::BalanceFunction;
use qrqueue::config::ExperimentConfig;
use qrqueue::control::LpProblem;
use qrqueue::oiqueue::{RedundancySpec, Word};
use qrqueue::whittle::WhittleConfig;

const TARGETS: [&str; 6] =
    ["parse_experiment_config", "parse_balance_function", "parse_redundancy_spec", "parse_whittle_spec", "parse_lp", "parse_word"];

fn parse(target: &str, text: &str) -> bool {
    match target {
        "parse_experiment_config" => ExperimentConfig::from_toml(text).is_ok(),
        "parse_balance_function" => BalanceFunction::from_json(text).is_ok(),
        "parse_redundancy_spec" => RedundancySpec::from_json(text).is_ok(),
        "parse_whittle_spec" => WhittleConfig::from_json(text).is_ok(),
        "parse_lp" => LpProblem::parse(text).is_ok(),
        "parse_word" => Word::parse(text).is_ok(),
        _ => unreachable!(),
    }
}

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| fs::read_to_string(p).unwrap()).collect()
}

#[test]
fn every_seed_parses() {
    for target in TARGETS {
        let seeds = seeds(target);
        assert!(!seeds.is_empty(), "{target}");
        for (k, text) in seeds.iter().enumerate() {
            assert!(parse(target, text), "{target} seed {k} rejected");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}", t in 0usize..6) {
        parse(TARGETS[t], &text);
    }

    #[test]
    fn mutated_seeds_never_panic(t in 0usize..6, pick in any::<prop::sample::Index>(), edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8)) {
        let seeds = seeds(TARGETS[t]);
        let mut bytes = pick.get(&seeds).as_bytes().to_vec();
        for (at, b) in edits {
            if bytes.is_empty() {
                bytes.push(b);
            } else {
                let k = at.index(bytes.len());
                bytes[k] = b;
            }
        }
        parse(TARGETS[t], &String::from_utf8_lossy(&bytes));
    }
}
