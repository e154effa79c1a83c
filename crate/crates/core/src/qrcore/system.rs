use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::state::{FerrersSet, Macrostate, UnitStep};
use crate::error::{QrError, Result};

/// Classification of a transition by the change it makes to the macrostate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionKind {
    Arrival(usize),
    Departure(usize),
    Internal,
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionKind::Arrival(i) => write!(f, "arrival{}", i + 1),
            TransitionKind::Departure(i) => write!(f, "departure{}", i + 1),
            TransitionKind::Internal => write!(f, "internal"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
    pub kind: TransitionKind,
}

/// Incrementally collects microstates and transitions.
///
/// Microstates are identified by a canonical integer encoding chosen by the
/// model (a word, a flattened count matrix, ...). Index order in the built
/// system is the lexicographic order of these encodings.
#[derive(Debug, Clone, Default)]
pub struct QueueSystemBuilder {
    n: usize,
    states: BTreeMap<Vec<u32>, Macrostate>,
    edges: BTreeMap<(Vec<u32>, Vec<u32>), (f64, Option<TransitionKind>)>,
}

impl QueueSystemBuilder {
    pub fn new(n: usize) -> Self {
        QueueSystemBuilder { n, ..Default::default() }
    }

    /// Registers a microstate. Re-adding a state with a different macrostate fails.
    pub fn add_state(&mut self, key: Vec<u32>, counts: Macrostate) -> Result<&mut Self> {
        if counts.dim() != self.n {
            return Err(QrError::Structural(format!(
                "state {key:?} has macrostate {counts} of dimension {}, expected {}",
                counts.dim(),
                self.n
            )));
        }
        if let Some(prev) = self.states.get(&key) {
            if *prev != counts {
                return Err(QrError::Structural(format!("state {key:?} registered with {prev} and {counts}")));
            }
        }
        self.states.insert(key, counts);
        Ok(self)
    }

    pub fn has_state(&self, key: &[u32]) -> bool {
        self.states.contains_key(key)
    }

    /// Adds `rate` to the transition `from -> to`; the kind is inferred from the counting map.
    pub fn add_edge(&mut self, from: Vec<u32>, to: Vec<u32>, rate: f64) -> Result<&mut Self> {
        self.push_edge(from, to, rate, None)
    }

    /// Like [`add_edge`](Self::add_edge) but with an explicit kind checked at build time.
    pub fn add_typed_edge(&mut self, from: Vec<u32>, to: Vec<u32>, rate: f64, kind: TransitionKind) -> Result<&mut Self> {
        self.push_edge(from, to, rate, Some(kind))
    }

    fn push_edge(&mut self, from: Vec<u32>, to: Vec<u32>, rate: f64, kind: Option<TransitionKind>) -> Result<&mut Self> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(QrError::Structural(format!("rate {rate} on {from:?} -> {to:?}")));
        }
        let entry = self.edges.entry((from.clone(), to.clone())).or_insert((0.0, kind));
        match (entry.1, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(QrError::Structural(format!("edge {from:?} -> {to:?} declared as {a} and {b}")));
            }
            (None, Some(_)) => entry.1 = kind,
            _ => {}
        }
        entry.0 += rate;
        Ok(self)
    }

    pub fn build(self) -> Result<QueueSystem> {
        let n = self.n;
        let keys: Vec<Vec<u32>> = self.states.keys().cloned().collect();
        let counting: Vec<Macrostate> = self.states.values().cloned().collect();
        let key_index: HashMap<Vec<u32>, usize> = keys.iter().cloned().enumerate().map(|(k, v)| (v, k)).collect();

        let empties: Vec<usize> = (0..counting.len()).filter(|&k| counting[k].is_zero()).collect();
        if empties.len() != 1 {
            return Err(QrError::Structural(format!(
                "expected exactly one empty microstate, found {}",
                empties.len()
            )));
        }
        let image = FerrersSet::new(n, counting.iter().cloned())
            .map_err(|e| QrError::Structural(format!("image of the counting map: {e}")))?;

        let mut edges = Vec::with_capacity(self.edges.len());
        for ((from, to), (rate, declared)) in self.edges {
            let s = *key_index
                .get(&from)
                .ok_or_else(|| QrError::Structural(format!("edge from unknown state {from:?}")))?;
            let t = *key_index
                .get(&to)
                .ok_or_else(|| QrError::Structural(format!("edge to unknown state {to:?}")))?;
            let kind = match counting[s].unit_difference(&counting[t]) {
                Some(UnitStep::Zero) => TransitionKind::Internal,
                Some(UnitStep::Up(i)) => TransitionKind::Arrival(i),
                Some(UnitStep::Down(i)) => TransitionKind::Departure(i),
                None => {
                    return Err(QrError::Structural(format!(
                        "edge {from:?} -> {to:?} changes the macrostate from {} to {}",
                        counting[s], counting[t]
                    )))
                }
            };
            if let Some(d) = declared {
                if d != kind {
                    return Err(QrError::Structural(format!(
                        "edge {from:?} -> {to:?} declared {d} but the counting map says {kind}"
                    )));
                }
            }
            if rate > 0.0 {
                edges.push(Edge { from: s, to: t, rate, kind });
            }
        }
        Ok(QueueSystem::assemble(n, keys, counting, key_index, edges, empties[0], image))
    }
}

/// A finite queueing system: microstates, counting map and transition kernel.
#[derive(Debug, Clone)]
pub struct QueueSystem {
    n: usize,
    keys: Vec<Vec<u32>>,
    counting: Vec<Macrostate>,
    key_index: HashMap<Vec<u32>, usize>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    empty: usize,
    image: FerrersSet,
    macro_of: Vec<usize>,
    states_of_macro: Vec<Vec<usize>>,
}

impl QueueSystem {
    fn assemble(
        n: usize,
        keys: Vec<Vec<u32>>,
        counting: Vec<Macrostate>,
        key_index: HashMap<Vec<u32>, usize>,
        edges: Vec<Edge>,
        empty: usize,
        image: FerrersSet,
    ) -> Self {
        let m = keys.len();
        let mut out_edges = vec![Vec::new(); m];
        let mut in_edges = vec![Vec::new(); m];
        for (k, e) in edges.iter().enumerate() {
            out_edges[e.from].push(k);
            in_edges[e.to].push(k);
        }
        let macro_of: Vec<usize> = counting.iter().map(|x| image.index_of(x).expect("image contains counting")).collect();
        let mut states_of_macro = vec![Vec::new(); image.len()];
        for (s, &x) in macro_of.iter().enumerate() {
            states_of_macro[x].push(s);
        }
        QueueSystem { n, keys, counting, key_index, edges, out_edges, in_edges, empty, image, macro_of, states_of_macro }
    }

    /// Same state space with the rate of every edge replaced by `f(edge)`; zero rates drop the edge.
    pub fn map_rates(&self, mut f: impl FnMut(usize, &Edge) -> f64) -> Result<QueueSystem> {
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            let r = f(k, e);
            if !r.is_finite() || r < 0.0 {
                return Err(QrError::Structural(format!("rate {r} on edge {k}")));
            }
            if r > 0.0 {
                edges.push(Edge { rate: r, ..*e });
            }
        }
        Ok(QueueSystem::assemble(
            self.n,
            self.keys.clone(),
            self.counting.clone(),
            self.key_index.clone(),
            edges,
            self.empty,
            self.image.clone(),
        ))
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn n_states(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, s: usize) -> &[u32] {
        &self.keys[s]
    }

    pub fn index_of(&self, key: &[u32]) -> Option<usize> {
        self.key_index.get(key).copied()
    }

    pub fn counting(&self, s: usize) -> &Macrostate {
        &self.counting[s]
    }

    pub fn empty_state(&self) -> usize {
        self.empty
    }

    /// The image `|S|` of the counting map.
    pub fn image(&self) -> &FerrersSet {
        &self.image
    }

    /// Index of `|s|` inside [`image`](Self::image).
    pub fn macro_index(&self, s: usize) -> usize {
        self.macro_of[s]
    }

    /// Microstates whose macrostate has the given index in the image.
    pub fn states_of_macro(&self, x: usize) -> &[usize] {
        &self.states_of_macro[x]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    pub fn out_edges(&self, s: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.out_edges[s].iter().map(move |&k| (k, &self.edges[k]))
    }

    pub fn in_edges(&self, s: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.in_edges[s].iter().map(move |&k| (k, &self.edges[k]))
    }

    /// Rate of `s -> t`, zero if absent.
    pub fn rate(&self, s: usize, t: usize) -> f64 {
        self.out_edges(s).filter(|(_, e)| e.to == t).map(|(_, e)| e.rate).sum()
    }

    /// Total rate out of `s`, self-loops excluded.
    pub fn outflow(&self, s: usize) -> f64 {
        self.out_edges(s).filter(|(_, e)| e.to != s).map(|(_, e)| e.rate).sum()
    }

    /// Writes the sparse edge list as `s_index,t_index,rate,kind`.
    pub fn write_edge_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s_index,t_index,rate,kind")?;
        for e in &self.edges {
            writeln!(w, "{},{},{:e},{}", e.from, e.to, e.rate, e.kind)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn birth_death(cap: u32, nu: f64, mu: f64) -> QueueSystem {
        let mut b = QueueSystemBuilder::new(1);
        for k in 0..=cap {
            b.add_state(vec![k], Macrostate(vec![k])).unwrap();
        }
        for k in 0..cap {
            b.add_edge(vec![k], vec![k + 1], nu).unwrap();
            b.add_edge(vec![k + 1], vec![k], mu).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn kinds_are_inferred() {
        let sys = birth_death(2, 1.0, 2.0);
        assert_eq!(sys.n_states(), 3);
        assert_eq!(sys.edges().len(), 4);
        assert_eq!(sys.edge(0).kind, TransitionKind::Arrival(0));
        assert_eq!(sys.edge(1).kind, TransitionKind::Departure(0));
        assert_eq!(sys.outflow(1), 3.0);
    }

    #[test]
    fn structural_errors() {
        let mut b = QueueSystemBuilder::new(1);
        b.add_state(vec![0], Macrostate(vec![0])).unwrap();
        b.add_state(vec![2], Macrostate(vec![2])).unwrap();
        assert!(matches!(b.clone().build(), Err(QrError::Structural(_))));
        b.add_state(vec![1], Macrostate(vec![1])).unwrap();
        b.add_edge(vec![0], vec![2], 1.0).unwrap();
        assert!(matches!(b.build(), Err(QrError::Structural(_))));

        let mut b = QueueSystemBuilder::new(1);
        b.add_state(vec![0], Macrostate(vec![0])).unwrap();
        assert!(b.add_edge(vec![0], vec![0], -1.0).is_err());
        b.add_state(vec![1], Macrostate(vec![1])).unwrap();
        b.add_typed_edge(vec![0], vec![1], 1.0, TransitionKind::Departure(0)).unwrap();
        assert!(b.build().is_err());
    }

    #[test]
    fn duplicate_edges_merge_and_zero_edges_drop() {
        let mut b = QueueSystemBuilder::new(1);
        b.add_state(vec![0], Macrostate(vec![0])).unwrap();
        b.add_state(vec![1], Macrostate(vec![1])).unwrap();
        b.add_edge(vec![0], vec![1], 1.0).unwrap();
        b.add_edge(vec![0], vec![1], 0.5).unwrap();
        b.add_edge(vec![1], vec![0], 0.0).unwrap();
        let sys = b.build().unwrap();
        assert_eq!(sys.edges().len(), 1);
        assert_eq!(sys.rate(0, 1), 1.5);
    }

    #[test]
    fn edge_csv() {
        let sys = birth_death(1, 1.0, 2.0);
        let mut buf = Vec::new();
        sys.write_edge_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "s_index,t_index,rate,kind\n0,1,1e0,arrival1\n1,0,2e0,departure1\n");
    }
}
