use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use qrqueue::balance::ThetaFamily;
use qrqueue::config::{
    Algorithm, CaseStudyConfig, ExperimentConfig, ExportLpConfig, ModelConfig, Scenario, SweepConfig, ToysConfig,
};
use qrqueue::control::{export_lp, loss, optimal_policy, sweep, sweep_csv, toy_example, LpVariant, ToyId};
use qrqueue::qrcore::Macrostate;
use qrqueue::rl::{run_ac, run_q, run_sage, RunLog, RunSpec};
use qrqueue::verify::{model_checks, run_suite, Suite, SuiteReport};

#[derive(Parser, Debug)]
#[command(name = "qrqueue", version, about = "Balanced admission control and policy-gradient experiments on product-form queues")]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; defaults to the configured one, then `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Case-study seeds, e.g. `0,1,2` or `0..10`.
    #[arg(long, global = true, value_name = "LIST")]
    seeds: Option<String>,
    /// Case-study decision epochs per run.
    #[arg(long, global = true, value_name = "N")]
    steps: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true, value_name = "K")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Loss of the best balanced policy on the three two-class examples.
    ReproduceToys,
    /// Loss of the best balanced policy over a grid of arrival rates.
    Sweep {
        #[arg(long, value_enum)]
        example: Option<ExampleArg>,
    },
    /// Learning runs on the redundancy system.
    CaseStudy {
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
    },
    /// Invariant suites; all of them when none is named.
    Verify {
        #[arg(value_enum)]
        suites: Vec<SuiteArg>,
    },
    /// Linear programs of an admission problem in CPLEX LP format.
    ExportLp {
        #[arg(long, value_enum)]
        example: Option<ExampleArg>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ExampleArg {
    PathReward,
    CornerReward,
    Realistic,
}

impl From<ExampleArg> for ToyId {
    fn from(v: ExampleArg) -> Self {
        match v {
            ExampleArg::PathReward => ToyId::PathReward,
            ExampleArg::CornerReward => ToyId::CornerReward,
            ExampleArg::Realistic => ToyId::Realistic,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScenarioArg {
    Adversarial,
    #[value(alias = "non-adversarial")]
    Nonadversarial,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AlgorithmArg {
    Sage,
    ActorCritic,
    QLearning,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Static,
    SemiStatic,
    DynamicCumProd,
    Imbalanced,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SuiteArg {
    Core,
    Balance,
    Models,
    Gradients,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    General,
    Balanced,
    ReversibleLocal,
}

/// Failure classes, each with its own exit status.
enum Failure {
    /// Bad configuration or flags: exit 2.
    Config(anyhow::Error),
    /// A verification check failed: exit 1.
    Verification,
    /// Anything else: exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<qrqueue::QrError> for Failure {
    fn from(e: qrqueue::QrError) -> Self {
        Failure::Runtime(e.into())
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_error)?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display())).map_err(config_error)?
        }
        None => ExperimentConfig::empty(),
    };
    if let Some(k) = cli.jobs {
        if k == 0 {
            return Err(config_error(anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| Failure::Runtime(e.into()))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::ReproduceToys => reproduce_toys(cfg.toys.clone().unwrap_or_default(), &out),
        Command::Sweep { example } => {
            let mut s = cfg.sweep.clone().unwrap_or_default();
            if let Some(e) = example {
                s.example = e.into();
            }
            run_sweep(&s, &out)
        }
        Command::CaseStudy { scenario, algorithm, family } => {
            let mut c = cfg.case_study.clone().unwrap_or_default();
            if let Some(s) = scenario {
                let name = match s {
                    ScenarioArg::Adversarial => Scenario::Adversarial,
                    ScenarioArg::Nonadversarial => Scenario::NonAdversarial,
                };
                c.model = ModelConfig::Scenario { name };
            }
            if let Some(a) = algorithm {
                c.algorithm = match a {
                    AlgorithmArg::Sage => Algorithm::Sage,
                    AlgorithmArg::ActorCritic => Algorithm::ActorCritic,
                    AlgorithmArg::QLearning => Algorithm::QLearning,
                };
                if c.algorithm == Algorithm::QLearning && family.is_none() {
                    c.family = None;
                }
            }
            if let Some(f) = family {
                c.family = Some(match f {
                    FamilyArg::Static => ThetaFamily::Static,
                    FamilyArg::SemiStatic => ThetaFamily::SemiStatic,
                    FamilyArg::DynamicCumProd => ThetaFamily::DynamicCumProd,
                    FamilyArg::Imbalanced => ThetaFamily::Imbalanced,
                });
            }
            if let Some(list) = &cli.seeds {
                c.seeds = parse_seeds(list).map_err(config_error)?;
            }
            if let Some(n) = cli.steps {
                c.steps = n;
            }
            c.validate().map_err(config_error)?;
            case_study(&c, &out)
        }
        Command::Verify { suites } => {
            let v = cfg.verify.clone();
            let mut chosen: Vec<Suite> = suites
                .iter()
                .map(|s| match s {
                    SuiteArg::Core => Suite::Core,
                    SuiteArg::Balance => Suite::Balance,
                    SuiteArg::Models => Suite::Models,
                    SuiteArg::Gradients => Suite::Gradients,
                })
                .collect();
            if chosen.is_empty() {
                chosen = v.as_ref().map(|v| v.suites.clone()).unwrap_or_default();
            }
            if chosen.is_empty() {
                chosen = Suite::ALL.to_vec();
            }
            verify(&chosen, v.and_then(|v| v.model).as_ref(), cli.out.as_deref().or(cfg.output_dir.as_deref().map(Path::new)))
        }
        Command::ExportLp { example, variant } => {
            let mut e = cfg.export_lp.clone().unwrap_or_default();
            if let Some(x) = example {
                let (nu1, nu2) = match e.model {
                    ModelConfig::Toy { nu1, nu2, .. } => (nu1, nu2),
                    _ => (0.1, 0.1),
                };
                e.model = ModelConfig::Toy { example: x.into(), nu1, nu2 };
            }
            if let Some(v) = variant {
                e.variants = vec![match v {
                    VariantArg::General => LpVariant::General,
                    VariantArg::Balanced => LpVariant::Balanced,
                    VariantArg::ReversibleLocal => LpVariant::ReversibleLocal,
                }];
            }
            export(&e, &out)
        }
    }
}

/// Accepts comma-separated seeds and half-open ranges `a..b`.
fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
            if a >= b {
                return Err(anyhow!("empty seed range {part}"));
            }
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().with_context(|| format!("seed {part:?}"))?);
        }
    }
    if seeds.is_empty() {
        return Err(anyhow!("no seeds in {text:?}"));
    }
    Ok(seeds)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn fmt_loss(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |l| format!("{l:.6}"))
}

fn reproduce_toys(rates: ToysConfig, out: &Path) -> Result<(), Failure> {
    let results = ToyId::ALL
        .par_iter()
        .map(|&id| {
            let problem = toy_example(id, rates.nu1, rates.nu2)?;
            let report = loss(&problem)?;
            let opt = optimal_policy(&problem)?;
            // per-macrostate view of the optimal policy and the best mask
            let mut masks = String::from("x1,x2,optimal_admit_class1,optimal_admit_class2,in_best_balanced_mask\n");
            let sys = problem.system();
            for s in 0..sys.n_states() {
                let x: &Macrostate = sys.counting(s);
                let admits = |i: usize| {
                    let feasible = sys.image().contains(&x.plus(i));
                    if feasible {
                        format!("{}", opt.policy.prob(s, i))
                    } else {
                        String::new()
                    }
                };
                writeln!(masks, "{},{},{},{},{}", x.get(0), x.get(1), admits(0), admits(1), report.best_mask.contains(x) as u8)
                    .expect("writing to a string");
            }
            Ok((id, report, masks))
        })
        .collect::<qrqueue::Result<Vec<_>>>()?;

    let mut csv = String::from("example,nu1,nu2,g_opt,g_balanced,g_worst,loss_pct\n");
    println!("{:<14} {:>12} {:>12} {:>12} {:>10}", "example", "g_opt", "g_balanced", "g_worst", "loss_%");
    for (id, r, masks) in &results {
        writeln!(
            csv,
            "{},{},{},{:e},{:e},{:e},{}",
            id.name(),
            rates.nu1,
            rates.nu2,
            r.g_opt,
            r.g_balanced,
            r.g_worst,
            fmt_loss(r.loss_pct)
        )
        .expect("writing to a string");
        println!(
            "{:<14} {:>12.6} {:>12.6} {:>12.6} {:>10}",
            id.name(),
            r.g_opt,
            r.g_balanced,
            r.g_worst,
            r.loss_pct.map_or("n/a".into(), |l| format!("{l:.3}"))
        );
        write_file(out, &format!("masks_{}.csv", id.name()), masks)?;
    }
    write_file(out, "toys.csv", &csv)?;
    Ok(())
}

fn run_sweep(cfg: &SweepConfig, out: &Path) -> Result<(), Failure> {
    let rows = sweep(cfg.example, &cfg.nu1, &cfg.nu2)?;
    write_file(out, &format!("sweep_{}.csv", cfg.example.name()), &sweep_csv(&rows))?;
    println!("{} cells of {} written to {}", rows.len(), cfg.example.name(), out.display());
    Ok(())
}

fn run_name(c: &CaseStudyConfig) -> String {
    match c.family {
        Some(f) => format!("{}_{}", c.algorithm.name(), family_name(f)),
        None => c.algorithm.name().to_string(),
    }
}

fn family_name(f: ThetaFamily) -> &'static str {
    match f {
        ThetaFamily::Static => "static",
        ThetaFamily::SemiStatic => "semi_static",
        ThetaFamily::DynamicCumProd => "dynamic_cum_prod",
        ThetaFamily::Imbalanced => "imbalanced",
    }
}

fn case_study(c: &CaseStudyConfig, out: &Path) -> Result<(), Failure> {
    let env = c.model.redundancy().map_err(config_error)?;
    let logs = c
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = RunSpec { env: env.clone(), seed, stream: 0, total_steps: c.steps, record_stride: c.record_stride };
            match (c.algorithm, c.family) {
                (Algorithm::Sage, Some(f)) => run_sage(&run, f, &c.sage.unwrap_or_default()),
                (Algorithm::ActorCritic, Some(f)) => run_ac(&run, f, &c.actor_critic.unwrap_or_default()),
                (Algorithm::QLearning, None) => run_q(&run, &c.q_learning.unwrap_or_default()),
                _ => unreachable!("combination checked by validate"),
            }
        })
        .collect::<qrqueue::Result<Vec<RunLog>>>()?;
    let name = run_name(c);
    let mut summary = String::from("algorithm,family,seed,steps,final_mean_reward,final_theta_digest,table_size\n");
    for log in &logs {
        let mut buf = Vec::new();
        log.write_csv(&mut buf)?;
        write_file(out, &format!("{name}_seed{}.csv", log.summary.seed), &String::from_utf8(buf).expect("CSV is UTF-8"))?;
        let s = &log.summary;
        writeln!(
            summary,
            "{},{},{},{},{},{:016x},{}",
            s.algorithm,
            s.family.map_or("", family_name),
            s.seed,
            s.steps,
            s.final_mean_reward,
            s.final_theta_digest,
            s.table_size
        )
        .expect("writing to a string");
    }
    write_file(out, &format!("{name}_summary.csv"), &summary)?;
    let mean = logs.iter().map(|l| l.summary.final_mean_reward).sum::<f64>() / logs.len() as f64;
    println!("{} runs of {name}, {} steps each, mean final reward {mean:.6}", logs.len(), c.steps);
    Ok(())
}

fn verify(suites: &[Suite], model: Option<&ModelConfig>, out: Option<&Path>) -> Result<(), Failure> {
    let mut reports: Vec<SuiteReport> = Vec::new();
    for &s in suites {
        let report = run_suite(s)?;
        print!("{report}");
        reports.push(report);
    }
    if let Some(m) = model {
        let sys = m.system().map_err(config_error)?;
        let report = SuiteReport { suite: Suite::Models, checks: model_checks(&sys)? };
        print!("{report}");
        reports.push(report);
    }
    if let Some(dir) = out {
        let mut buf = Vec::new();
        for (k, r) in reports.iter().enumerate() {
            r.write_csv(&mut buf, k == 0)?;
        }
        write_file(dir, "verify.csv", &String::from_utf8(buf).expect("CSV is UTF-8"))?;
    }
    if reports.iter().all(SuiteReport::passed) {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn export(cfg: &ExportLpConfig, out: &Path) -> Result<(), Failure> {
    let problem = cfg.model.admission_problem().map_err(config_error)?;
    let label = match &cfg.model {
        ModelConfig::Toy { example, .. } => example.name(),
        other => other.kind(),
    };
    let variants = if cfg.variants.is_empty() { LpVariant::ALL.to_vec() } else { cfg.variants.clone() };
    for v in variants {
        let text = export_lp(&problem, v)?;
        let file = format!("{label}_{}.lp", v.name());
        write_file(out, &file, &text)?;
        println!("wrote {}", out.join(file).display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("5, 7,9").unwrap(), vec![5, 7, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }
}
