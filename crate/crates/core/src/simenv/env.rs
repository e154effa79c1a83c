use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use super::ctmc::stream_rng;
use crate::error::{QrError, Result};
use crate::oiqueue::{RedundancySpec, Word};

/// Decision epoch: the word seen by an arriving customer and the class of that customer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct EnvState {
    pub word: Word,
    /// 0-based class of the arriving customer.
    pub incoming_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    /// Rewards of the service completions before the next arrival.
    pub reward: f64,
    pub next: EnvState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnvEventKind {
    Admit,
    Reject,
    Completion,
    Abandonment,
}

impl EnvEventKind {
    fn name(self) -> &'static str {
        match self {
            EnvEventKind::Admit => "admit",
            EnvEventKind::Reject => "reject",
            EnvEventKind::Completion => "completion",
            EnvEventKind::Abandonment => "abandonment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvEvent {
    pub time: f64,
    pub kind: EnvEventKind,
    /// 0-based class of the customer concerned.
    pub class: usize,
    /// Number of customers after the event.
    pub word_len: usize,
}

/// Redundancy system observed at arrival times.
///
/// Every server works on the oldest compatible customer and every customer
/// abandons on its own clock; a completion removes the customer from all servers.
/// Words are not truncated.
#[derive(Debug, Clone)]
pub struct RedundancyEnv {
    spec: RedundancySpec,
    rng: ChaCha8Rng,
    state: EnvState,
    time: f64,
    nu_total: f64,
    record: Option<Vec<EnvEvent>>,
}

impl RedundancyEnv {
    /// Validates the spec and draws the first arrival class.
    pub fn new(spec: RedundancySpec, seed: u64, stream: u64) -> Result<Self> {
        spec.validate()?;
        let nu_total = spec.nu.iter().sum();
        let mut env = RedundancyEnv {
            spec,
            rng: stream_rng(seed, stream),
            state: EnvState { word: Word::empty(), incoming_class: 0 },
            time: 0.0,
            nu_total,
            record: None,
        };
        env.reset();
        Ok(env)
    }

    pub fn spec(&self) -> &RedundancySpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Keeps a log of every event from now on.
    pub fn enable_recording(&mut self) {
        self.record.get_or_insert_with(Vec::new);
    }

    pub fn events(&self) -> &[EnvEvent] {
        self.record.as_deref().unwrap_or(&[])
    }

    /// Moves the environment to an arbitrary decision epoch.
    pub fn set_state(&mut self, state: EnvState) -> Result<()> {
        let n = self.spec.n_classes();
        if state.incoming_class >= n || state.word.letters().iter().any(|&l| l as usize >= n) {
            return Err(QrError::InvalidParams(format!("state {:?} has a class outside 1..={n}", state)));
        }
        self.state = state;
        Ok(())
    }

    /// Empties the system and draws a new arrival class.
    pub fn reset(&mut self) -> EnvState {
        let i = self.sample_class();
        self.state = EnvState { word: Word::empty(), incoming_class: i };
        self.time = 0.0;
        self.state.clone()
    }

    fn sample_class(&mut self) -> usize {
        let mut u = self.rng.random::<f64>() * self.nu_total;
        for (i, &v) in self.spec.nu.iter().enumerate() {
            if u < v {
                return i;
            }
            u -= v;
        }
        self.spec.nu.len() - 1
    }

    fn log(&mut self, kind: EnvEventKind, class: usize) {
        let (time, word_len) = (self.time, self.state.word.len());
        if let Some(r) = self.record.as_mut() {
            r.push(EnvEvent { time, kind, class, word_len });
        }
    }

    /// Position served by each server, or `None` if it is idle.
    fn assignments(&self) -> Vec<Option<usize>> {
        let letters = self.state.word.letters();
        (0..self.spec.n_servers())
            .map(|j| letters.iter().position(|&l| self.spec.compatible(l as usize, j)))
            .collect()
    }

    /// Applies the action and runs the system until the next arrival.
    pub fn step(&mut self, admit: bool) -> StepOutcome {
        let i = self.state.incoming_class;
        if admit {
            self.state.word = self.state.word.push(i);
            self.log(EnvEventKind::Admit, i);
        } else {
            self.log(EnvEventKind::Reject, i);
        }
        let mut reward = 0.0;
        loop {
            let serving = self.assignments();
            let service: f64 = serving.iter().zip(&self.spec.mu).filter(|(p, _)| p.is_some()).map(|(_, m)| m).sum();
            let abandon: f64 = self.state.word.letters().iter().map(|&l| self.spec.zeta[l as usize]).sum();
            let total = self.nu_total + service + abandon;
            self.time += self.rng.sample::<f64, _>(Exp1) / total;
            let mut u = self.rng.random::<f64>() * total;
            if u < self.nu_total {
                break;
            }
            u -= self.nu_total;
            let mut removed = None;
            for (j, p) in serving.iter().enumerate() {
                if let Some(p) = p {
                    if u < self.spec.mu[j] {
                        removed = Some((*p, EnvEventKind::Completion));
                        break;
                    }
                    u -= self.spec.mu[j];
                }
            }
            if removed.is_none() {
                let letters = self.state.word.letters();
                let mut p = letters.len() - 1;
                for (q, &l) in letters.iter().enumerate() {
                    let z = self.spec.zeta[l as usize];
                    if u < z {
                        p = q;
                        break;
                    }
                    u -= z;
                }
                removed = Some((p, EnvEventKind::Abandonment));
            }
            let (p, kind) = removed.expect("an event was drawn");
            let class = self.state.word.letters()[p] as usize;
            if kind == EnvEventKind::Completion {
                reward += self.spec.r[class];
            }
            self.state.word = self.state.word.remove(p);
            self.log(kind, class);
        }
        self.state.incoming_class = self.sample_class();
        StepOutcome { reward, next: self.state.clone() }
    }

    /// CSV with header `t,event,class,word_len`; classes are 1-based.
    pub fn write_trajectory_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,event,class,word_len")?;
        for e in self.events() {
            writeln!(w, "{},{},{},{}", e.time, e.kind.name(), e.class + 1, e.word_len)?;
        }
        Ok(())
    }
}

/// Fresh environment state: empty system and an arrival class drawn from `ν / Σν`.
pub fn env_reset(spec: &RedundancySpec, seed: u64) -> Result<EnvState> {
    Ok(RedundancyEnv::new(spec.clone(), seed, 0)?.state().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reject_in_empty_system() {
        let mut env = RedundancyEnv::new(RedundancySpec::adversarial(), 3, 0).unwrap();
        let out = env.step(false);
        assert_eq!(out.reward, 0.0);
        assert!(out.next.word.is_empty());
    }

    #[test]
    fn zero_arrival_rate_is_rejected() {
        let spec = RedundancySpec { nu: vec![1.0, 0.0, 0.0], ..RedundancySpec::adversarial() };
        assert!(env_reset(&spec, 0).is_err());
    }

    #[test]
    fn single_class_three_race() {
        // Admitting class 3 into the empty system: completion w.p. 0.5 / (0.5 + 0.5 + 1.5).
        let spec = RedundancySpec::adversarial();
        let mut env = RedundancyEnv::new(spec, 11, 0).unwrap();
        let (mut total, mut n) = (0.0, 0);
        for _ in 0..20_000 {
            env.reset();
            env.state.incoming_class = 2;
            total += env.step(true).reward;
            n += 1;
        }
        let mean = total / n as f64;
        // One completion at most, each worth 16 with probability 0.2.
        let se = 16.0 * (0.2f64 * 0.8 / n as f64).sqrt();
        assert!((mean - 3.2).abs() < 4.0 * se, "{mean}");
    }
}
