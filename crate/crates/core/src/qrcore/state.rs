use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QrError, Result};

/// Per-class customer counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Macrostate(pub Vec<u32>);

impl Macrostate {
    pub fn zeros(n: usize) -> Self {
        Macrostate(vec![0; n])
    }

    pub fn new(counts: Vec<u32>) -> Self {
        Macrostate(counts)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// `x + e_i`.
    pub fn plus(&self, i: usize) -> Macrostate {
        let mut v = self.0.clone();
        v[i] += 1;
        Macrostate(v)
    }

    /// `x - e_i`, or `None` when `x_i = 0`.
    pub fn minus(&self, i: usize) -> Option<Macrostate> {
        if self.0[i] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[i] -= 1;
        Some(Macrostate(v))
    }

    /// Componentwise `self <= other`.
    pub fn leq(&self, other: &Macrostate) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Signed difference `other - self` when it is `0` or `±e_i`.
    pub fn unit_difference(&self, other: &Macrostate) -> Option<UnitStep> {
        if self.0.len() != other.0.len() {
            return None;
        }
        let mut step = UnitStep::Zero;
        for (i, (&a, &b)) in self.0.iter().zip(&other.0).enumerate() {
            let d = b as i64 - a as i64;
            match (d, step) {
                (0, _) => {}
                (1, UnitStep::Zero) => step = UnitStep::Up(i),
                (-1, UnitStep::Zero) => step = UnitStep::Down(i),
                _ => return None,
            }
        }
        Some(step)
    }
}

impl fmt::Display for Macrostate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for Macrostate {
    fn from(v: Vec<u32>) -> Self {
        Macrostate(v)
    }
}

/// Difference between two macrostates that differ by at most one unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitStep {
    Zero,
    Up(usize),
    Down(usize),
}

/// A finite coordinate-convex subset of `N^n` containing the origin.
///
/// Members are kept in lexicographic order, which fixes the index of each
/// macrostate used by every dense vector built on top of the set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FerrersSetRepr", into = "FerrersSetRepr")]
pub struct FerrersSet {
    n: usize,
    members: Vec<Macrostate>,
    index: HashMap<Macrostate, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FerrersSetRepr {
    n: usize,
    members: Vec<Macrostate>,
}

impl TryFrom<FerrersSetRepr> for FerrersSet {
    type Error = QrError;
    fn try_from(r: FerrersSetRepr) -> Result<Self> {
        FerrersSet::new(r.n, r.members)
    }
}

impl From<FerrersSet> for FerrersSetRepr {
    fn from(f: FerrersSet) -> Self {
        FerrersSetRepr { n: f.n, members: f.members }
    }
}

impl FerrersSet {
    /// Builds the set, checking that it contains `0` and is coordinate-convex.
    pub fn new(n: usize, members: impl IntoIterator<Item = Macrostate>) -> Result<Self> {
        let set: BTreeSet<Macrostate> = members.into_iter().collect();
        if let Some(bad) = set.iter().find(|x| x.dim() != n) {
            return Err(QrError::NotFerrers(format!("{bad} has dimension {}, expected {n}", bad.dim())));
        }
        if !set.contains(&Macrostate::zeros(n)) {
            return Err(QrError::NotFerrers("the origin is missing".into()));
        }
        for x in &set {
            for i in 0..n {
                if let Some(y) = x.minus(i) {
                    if !set.contains(&y) {
                        return Err(QrError::NotFerrers(format!("{x} is present but {y} is not")));
                    }
                }
            }
        }
        Ok(Self::from_sorted_unchecked(n, set.into_iter().collect()))
    }

    fn from_sorted_unchecked(n: usize, members: Vec<Macrostate>) -> Self {
        let index = members.iter().cloned().enumerate().map(|(k, x)| (x, k)).collect();
        FerrersSet { n, members, index }
    }

    /// The box `[0, caps_1] x ... x [0, caps_n]`.
    pub fn boxed(caps: &[u32]) -> Self {
        let n = caps.len();
        let mut members = vec![Macrostate::zeros(n)];
        for (i, &c) in caps.iter().enumerate() {
            let mut next = Vec::with_capacity(members.len() * (c as usize + 1));
            for x in &members {
                for v in 0..=c {
                    let mut y = x.clone();
                    y.0[i] = v;
                    next.push(y);
                }
            }
            members = next;
        }
        members.sort();
        Self::from_sorted_unchecked(n, members)
    }

    /// `{x in N^n : x_1 + ... + x_n <= cap}`.
    pub fn total_cap(n: usize, cap: u32) -> Self {
        let boxed = Self::boxed(&vec![cap; n]);
        let members = boxed.members.into_iter().filter(|x| x.total() <= cap).collect();
        Self::from_sorted_unchecked(n, members)
    }

    /// Keeps the members accepted by `keep`; fails if the result is not Ferrers.
    pub fn filter(&self, keep: impl Fn(&Macrostate) -> bool) -> Result<Self> {
        FerrersSet::new(self.n, self.members.iter().filter(|x| keep(x)).cloned())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: &Macrostate) -> bool {
        self.index.contains_key(x)
    }

    pub fn index_of(&self, x: &Macrostate) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn members(&self) -> &[Macrostate] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = &Macrostate> {
        self.members.iter()
    }

    pub fn is_subset(&self, other: &FerrersSet) -> bool {
        self.n == other.n && self.members.iter().all(|x| other.contains(x))
    }

    /// Points of the set that are not dominated by another point of the set.
    pub fn maximal_points(&self) -> Vec<Macrostate> {
        self.members
            .iter()
            .filter(|x| (0..self.n).all(|i| !self.contains(&x.plus(i))))
            .cloned()
            .collect()
    }

    /// Largest value of coordinate `i` over the set.
    pub fn max_coord(&self, i: usize) -> u32 {
        self.members.iter().map(|x| x.get(i)).max().unwrap_or(0)
    }
}

/// True when `set` contains the origin and is coordinate-convex.
pub fn is_ferrers(n: usize, set: &BTreeSet<Macrostate>) -> bool {
    set.contains(&Macrostate::zeros(n))
        && set
            .iter()
            .all(|x| (0..n).all(|i| x.minus(i).is_none_or(|y| set.contains(&y))))
}
