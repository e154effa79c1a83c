use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{QrError, Result};
use crate::qrcore::{QueueSystem, TransitionKind};

/// Generator for run `stream` of an experiment seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon_events: u64,
    /// Every `record_stride`-th event is kept in the trajectory.
    pub record_stride: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_events == 0 || self.record_stride == 0 {
            return Err(QrError::InvalidParams("horizon_events and record_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimEventKind {
    Jump(TransitionKind),
    /// The chain reached a state with no outgoing rate and stopped.
    Absorbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub events: Vec<SimEvent>,
    /// Time spent in each state.
    pub occupation: Vec<f64>,
    pub total_time: f64,
    pub n_events: u64,
    pub halted: bool,
}

impl Trajectory {
    /// Fraction of time spent in each state.
    pub fn empirical_distribution(&self) -> Vec<f64> {
        self.occupation.iter().map(|t| t / self.total_time).collect()
    }

    /// CSV with header `time,from,to,kind`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,from,to,kind")?;
        for e in &self.events {
            let kind = match e.kind {
                SimEventKind::Jump(k) => k.to_string(),
                SimEventKind::Absorbed => "absorbed".to_string(),
            };
            writeln!(w, "{},{},{},{kind}", e.time, e.from, e.to)?;
        }
        Ok(())
    }
}

/// Jump-chain simulation from the empty state: exponential holding times at the
/// total outflow rate and jumps chosen in proportion to the rates.
pub fn simulate_ctmc(sys: &QueueSystem, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    let mut s = sys.empty_state();
    let mut time = 0.0;
    let mut occupation = vec![0.0; sys.n_states()];
    let mut events = Vec::new();
    let mut n_events = 0;
    let mut halted = false;
    while n_events < cfg.horizon_events {
        let out: Vec<(usize, f64, TransitionKind)> =
            sys.out_edges(s).filter(|(_, e)| e.to != s).map(|(_, e)| (e.to, e.rate, e.kind)).collect();
        let total: f64 = out.iter().map(|o| o.1).sum();
        if !(total > 0.0) {
            halted = true;
            events.push(SimEvent { time, from: s, to: s, kind: SimEventKind::Absorbed });
            break;
        }
        let hold: f64 = rng.sample::<f64, _>(Exp1) / total;
        occupation[s] += hold;
        time += hold;
        let mut u = rng.random::<f64>() * total;
        let mut pick = out.len() - 1;
        for (k, o) in out.iter().enumerate() {
            if u < o.1 {
                pick = k;
                break;
            }
            u -= o.1;
        }
        let (to, _, kind) = out[pick];
        n_events += 1;
        if n_events % cfg.record_stride == 0 {
            events.push(SimEvent { time, from: s, to, kind: SimEventKind::Jump(kind) });
        }
        s = to;
    }
    Ok(Trajectory { events, occupation, total_time: time, n_events, halted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrcore::{Macrostate, QueueSystemBuilder};

    fn mm1(nu: f64) -> QueueSystem {
        let mut b = QueueSystemBuilder::new(1);
        for k in 0..=3u32 {
            b.add_state(vec![k], Macrostate(vec![k])).unwrap();
        }
        for k in 0..3u32 {
            b.add_edge(vec![k], vec![k + 1], nu).unwrap();
            b.add_edge(vec![k + 1], vec![k], 1.0).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn no_arrivals_means_no_events() {
        let mut b = QueueSystemBuilder::new(1);
        b.add_state(vec![0], Macrostate(vec![0])).unwrap();
        let sys = b.build().unwrap();
        let t = simulate_ctmc(&sys, &SimConfig { seed: 1, horizon_events: 10, record_stride: 1 }).unwrap();
        assert!(t.halted);
        assert_eq!(t.n_events, 0);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let sys = mm1(0.5);
        let cfg = SimConfig { seed: 9, horizon_events: 500, record_stride: 1 };
        assert_eq!(simulate_ctmc(&sys, &cfg).unwrap(), simulate_ctmc(&sys, &cfg).unwrap());
        let other = SimConfig { seed: 10, ..cfg };
        assert_ne!(simulate_ctmc(&sys, &cfg).unwrap(), simulate_ctmc(&sys, &other).unwrap());
    }
}
