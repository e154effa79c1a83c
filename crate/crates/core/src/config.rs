//! Experiment configuration files (TOML) for the command-line runner.

use serde::{Deserialize, Serialize};

use crate::balance::ThetaFamily;
use crate::control::{toy_example, AdmissionProblem, LpVariant, ToyId};
use crate::error::{QrError, Result};
use crate::oiqueue::{build_oi_system, redundancy_to_oi, RedundancySpec};
use crate::qrcore::{FerrersSet, QueueSystem};
use crate::rl::{AcConfig, QConfig, SageConfig};
use crate::verify::Suite;
use crate::whittle::{build_whittle_system, WhittleConfig, WhittleSpec, WhittleTruncation};

/// Version written in and required of every configuration file.
pub const SCHEMA_VERSION: u32 = 1;

/// Largest number of words of a configured OI truncation.
pub const MAX_CONFIG_STATES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toys: Option<ToysConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_study: Option<CaseStudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_lp: Option<ExportLpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToysConfig {
    pub nu1: f64,
    pub nu2: f64,
}

impl Default for ToysConfig {
    fn default() -> Self {
        ToysConfig { nu1: 0.1, nu2: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub example: ToyId,
    pub nu1: Vec<f64>,
    pub nu2: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        SweepConfig { example: ToyId::Realistic, nu1: grid.clone(), nu2: grid }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Adversarial,
    #[serde(alias = "nonadversarial")]
    NonAdversarial,
}

impl Scenario {
    pub fn spec(self) -> RedundancySpec {
        match self {
            Scenario::Adversarial => RedundancySpec::adversarial(),
            Scenario::NonAdversarial => RedundancySpec::non_adversarial(),
        }
    }
}

/// A queueing model; each command accepts the kinds it can run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// One of the two built-in redundancy scenarios.
    Scenario { name: Scenario },
    /// A redundancy system given in full.
    Redundancy { spec: RedundancySpec },
    /// The OI queue of a redundancy system, truncated to at most `cap` customers.
    Oi { spec: RedundancySpec, cap: u32 },
    /// A Whittle network truncated by per-class totals `totals[i]`.
    Whittle { network: WhittleConfig, totals: Vec<u32> },
    /// One of the two-class admission examples.
    Toy { example: ToyId, nu1: f64, nu2: f64 },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Scenario { .. } => "scenario",
            ModelConfig::Redundancy { .. } => "redundancy",
            ModelConfig::Oi { .. } => "oi",
            ModelConfig::Whittle { .. } => "whittle",
            ModelConfig::Toy { .. } => "toy",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Scenario { .. } => Ok(()),
            ModelConfig::Redundancy { spec } => spec.validate(),
            ModelConfig::Oi { spec, cap } => {
                spec.validate()?;
                let words = crate::verify::corpus::word_count(&FerrersSet::total_cap(spec.n_classes(), *cap));
                if words > MAX_CONFIG_STATES {
                    return Err(QrError::SizeCap(format!("{words} words exceed {MAX_CONFIG_STATES}; lower the cap")));
                }
                Ok(())
            }
            ModelConfig::Whittle { .. } => self.whittle().map(|_| ()),
            ModelConfig::Toy { example, nu1, nu2 } => check_rates(example.name(), &[*nu1], &[*nu2]),
        }
    }

    /// Environment of the redundancy models.
    pub fn redundancy(&self) -> Result<RedundancySpec> {
        match self {
            ModelConfig::Scenario { name } => Ok(name.spec()),
            ModelConfig::Redundancy { spec } => Ok(spec.clone()),
            other => Err(QrError::InvalidParams(format!("a {} model is not a redundancy system", other.kind()))),
        }
    }

    fn whittle(&self) -> Result<(WhittleSpec, WhittleTruncation)> {
        match self {
            ModelConfig::Whittle { network, totals } => {
                let spec = network.clone().into_spec()?;
                if totals.len() != spec.n {
                    return Err(QrError::InvalidParams(format!("{} totals for {} classes", totals.len(), spec.n)));
                }
                let trunc = WhittleTruncation::ClassTotals(FerrersSet::boxed(totals));
                let states = trunc.states(&spec)?.len();
                if states > MAX_CONFIG_STATES {
                    return Err(QrError::SizeCap(format!("{states} states exceed {MAX_CONFIG_STATES}; lower the totals")));
                }
                Ok((spec, trunc))
            }
            other => Err(QrError::InvalidParams(format!("a {} model is not a Whittle network", other.kind()))),
        }
    }

    /// Uncontrolled microstate system of the OI, Whittle and toy models.
    pub fn system(&self) -> Result<QueueSystem> {
        match self {
            ModelConfig::Oi { spec, cap } => {
                build_oi_system(&redundancy_to_oi(spec), &FerrersSet::total_cap(spec.n_classes(), *cap))
            }
            ModelConfig::Whittle { .. } => {
                let (spec, trunc) = self.whittle()?;
                build_whittle_system(&spec, &trunc)
            }
            ModelConfig::Toy { .. } => Ok(self.admission_problem()?.system().clone()),
            other => Err(QrError::InvalidParams(format!(
                "a {} model has no finite state space; use an oi model with a cap",
                other.kind()
            ))),
        }
    }

    /// Admission-control problem of the toy models.
    pub fn admission_problem(&self) -> Result<AdmissionProblem> {
        match self {
            ModelConfig::Toy { example, nu1, nu2 } => toy_example(*example, *nu1, *nu2),
            other => Err(QrError::InvalidParams(format!("a {} model carries no admission rewards", other.kind()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sage,
    ActorCritic,
    QLearning,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sage => "sage",
            Algorithm::ActorCritic => "actor_critic",
            Algorithm::QLearning => "q_learning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub model: ModelConfig,
    pub algorithm: Algorithm,
    /// Policy family of SAGE and actor-critic; Q-learning takes none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ThetaFamily>,
    pub seeds: Vec<u64>,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sage: Option<SageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_critic: Option<AcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_learning: Option<QConfig>,
}

/// Default number of decision epochs of a case-study run.
pub const DEFAULT_CASE_STUDY_STEPS: u64 = 100_000;

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            model: ModelConfig::Scenario { name: Scenario::Adversarial },
            algorithm: Algorithm::Sage,
            family: Some(ThetaFamily::Static),
            seeds: (0..10).collect(),
            steps: DEFAULT_CASE_STUDY_STEPS,
            record_stride: None,
            sage: None,
            actor_critic: None,
            q_learning: None,
        }
    }
}

impl CaseStudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.redundancy()?;
        if self.seeds.is_empty() {
            return Err(QrError::InvalidParams("the seeds list is empty".into()));
        }
        if self.record_stride == Some(0) {
            return Err(QrError::InvalidParams("record_stride must be positive".into()));
        }
        match (self.algorithm, self.family) {
            (Algorithm::Sage, Some(ThetaFamily::Imbalanced)) => Err(QrError::InvalidParams(
                "SAGE needs a balanced family: its gradient estimate relies on the product-form stationary \
                 distribution Π_θ ∝ Π Γ_θ, which the imbalanced family does not have; use static, semi_static \
                 or dynamic_cum_prod, or choose actor_critic"
                    .into(),
            )),
            (Algorithm::Sage | Algorithm::ActorCritic, None) => {
                Err(QrError::InvalidParams(format!("{} needs a policy family", self.algorithm.name())))
            }
            (Algorithm::QLearning, Some(_)) => {
                Err(QrError::InvalidParams("q_learning learns a table of action values and takes no family".into()))
            }
            _ => Ok(()),
        }?;
        if let Some(c) = &self.sage {
            c.validate()?;
        }
        if let Some(c) = &self.actor_critic {
            c.validate()?;
        }
        if let Some(c) = &self.q_learning {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Suites to run; all of them when empty.
    #[serde(default)]
    pub suites: Vec<Suite>,
    /// Extra model whose product form and partial balance are checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportLpConfig {
    pub model: ModelConfig,
    /// Variants to write; all of them when empty.
    #[serde(default)]
    pub variants: Vec<LpVariant>,
}

impl Default for ExportLpConfig {
    fn default() -> Self {
        ExportLpConfig { model: ModelConfig::Toy { example: ToyId::Realistic, nu1: 0.1, nu2: 0.1 }, variants: Vec::new() }
    }
}

fn check_rates(what: &str, nu1: &[f64], nu2: &[f64]) -> Result<()> {
    if nu1.is_empty() || nu2.is_empty() {
        return Err(QrError::InvalidParams(format!("{what}: empty rate grid")));
    }
    match nu1.iter().chain(nu2).find(|v| !(v.is_finite() && **v > 0.0)) {
        Some(v) => Err(QrError::InvalidParams(format!("{what}: arrival rate {v} must be positive"))),
        None => Ok(()),
    }
}

impl ExperimentConfig {
    /// Configuration with every block absent.
    pub fn empty() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            output_dir: None,
            toys: None,
            sweep: None,
            case_study: None,
            verify: None,
            export_lp: None,
        }
    }

    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| QrError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| QrError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(QrError::InvalidParams(format!(
                "schema_version {} is not supported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if let Some(t) = &self.toys {
            check_rates("toys", &[t.nu1], &[t.nu2])?;
        }
        if let Some(s) = &self.sweep {
            check_rates("sweep", &s.nu1, &s.nu2)?;
        }
        if let Some(c) = &self.case_study {
            c.validate()?;
        }
        if let Some(v) = &self.verify {
            if let Some(m) = &v.model {
                m.validate()?;
                m.system()?;
            }
        }
        if let Some(e) = &self.export_lp {
            e.model.validate()?;
            e.model.admission_problem()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
schema_version = 1
output_dir = "results"

[toys]
nu1 = 0.1
nu2 = 0.1

[sweep]
example = "corner_reward"
nu1 = [0.1, 0.9]
nu2 = [0.1, 0.9]

[case_study]
algorithm = "sage"
family = "semi_static"
seeds = [1, 2, 3]
steps = 1000

[case_study.model]
kind = "scenario"
name = "nonadversarial"

[case_study.sage]
batch = 50
step = 0.05

[export_lp]
variants = ["balanced"]

[export_lp.model]
kind = "toy"
example = "path_reward"
nu1 = 0.2
nu2 = 0.3
"#;

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_toml(FULL).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.case_study.unwrap().model.redundancy().unwrap(), RedundancySpec::non_adversarial());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = FULL.replace("steps = 1000", "steps = 1000\nstepz = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = FULL.replace("name = \"nonadversarial\"", "name = \"nonadversarial\"\nzeta = [1.0]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn schema_version_and_combinations() {
        assert!(ExperimentConfig::from_toml(&FULL.replace("schema_version = 1", "schema_version = 2")).is_err());
        let err = ExperimentConfig::from_toml(&FULL.replace("\"semi_static\"", "\"imbalanced\"")).unwrap_err();
        assert!(err.to_string().contains("balanced family"), "{err}");
    }

    #[test]
    fn whittle_and_redundancy_models() {
        let text = r#"
schema_version = 1
[verify]
suites = ["models"]
[verify.model]
kind = "whittle"
totals = [3]
[verify.model.network]
n = 1
m = 2
P = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
phi0 = 1.0
Phi = "unit"
[verify.model.network.phi]
kind = "from_balance"
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let sys = cfg.verify.as_ref().unwrap().model.as_ref().unwrap().system().unwrap();
        assert_eq!(sys.n_states(), 10);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);

        let text = r#"
schema_version = 1
[case_study]
algorithm = "q_learning"
seeds = [4]
steps = 10
[case_study.model]
kind = "redundancy"
[case_study.model.spec]
nu = [1.0]
zeta = [0.5]
mu = [1.0]
r = [2.0]
B = [[1]]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
