//! Finite weighted measure spaces, measurable sets, simple functions and
//! partitions.
//!
//! A [`MeasureSpace`] is a finite ground set of atoms, each carrying a
//! nonnegative weight. Every subset has finite measure, so the family of
//! finite-measure sets is the full power set. Zero-weight atoms are allowed;
//! they are how null sets are built.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite ground set with nonnegative atom weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpace {
    atoms: Vec<String>,
    weights: Vec<f64>,
}

impl MeasureSpace {
    pub fn new(atoms: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidSpace(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        let mut seen = HashSet::new();
        for id in &atoms {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate atom id `{id}`")));
            }
        }
        for (id, &w) in atoms.iter().zip(&weights) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidSpace(format!(
                    "weight of `{id}` must be finite and nonnegative, got {w}"
                )));
            }
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::InvalidSpace("all weights are zero".into()));
        }
        Ok(Self { atoms, weights })
    }

    /// Space with generated atom ids `x0, x1, ...`.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let atoms = (0..weights.len()).map(|i| format!("x{i}")).collect();
        Self::new(atoms, weights)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, atom: usize) -> f64 {
        self.weights[atom]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a == id)
    }

    /// Resolves atom ids into a set.
    pub fn set_of(&self, ids: &[&str]) -> Result<MeasurableSet> {
        let mut members = Vec::with_capacity(ids.len());
        for id in ids {
            match self.index_of(id) {
                Some(i) => members.push(i),
                None => return Err(Error::Domain(format!("unknown atom id `{id}`"))),
            }
        }
        Ok(MeasurableSet::new(members))
    }

    /// Atoms of strictly positive weight, in index order.
    pub fn positive_atoms(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn null_atoms(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.weights[i] == 0.0)
            .collect()
    }

    pub fn full_set(&self) -> MeasurableSet {
        MeasurableSet::full(self.len())
    }

    pub fn singletons(&self) -> Vec<MeasurableSet> {
        (0..self.len()).map(MeasurableSet::singleton).collect()
    }

    /// Every subset of the ground set, ordered by bitmask. Only sensible for
    /// small spaces; panics above 24 atoms.
    pub fn all_subsets(&self) -> Vec<MeasurableSet> {
        let n = self.len();
        assert!(n <= 24, "refusing to enumerate 2^{n} subsets");
        (0u64..(1u64 << n))
            .map(|mask| MeasurableSet::from_mask(mask, n))
            .collect()
    }

    pub fn check_set(&self, set: &MeasurableSet) -> Result<()> {
        match set.max_index() {
            Some(i) if i >= self.len() => Err(Error::InvalidSet {
                index: i,
                len: self.len(),
            }),
            _ => Ok(()),
        }
    }

    /// ν(A), the sum of member weights.
    pub fn measure(&self, set: &MeasurableSet) -> Result<f64> {
        self.check_set(set)?;
        Ok(set.iter().map(|i| self.weights[i]).sum())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// L²(ν) pairing of two atom vectors.
    pub fn inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        self.weights
            .iter()
            .zip(f.iter().zip(g.iter()))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn norm_sq(&self, f: &DVector<f64>) -> f64 {
        self.inner(f, f)
    }

    /// L²(ν) inner product of two simple functions.
    pub fn l2_inner(&self, f: &SimpleFunction, g: &SimpleFunction) -> Result<f64> {
        let fv = f.pointwise(self)?;
        let gv = g.pointwise(self)?;
        Ok(self.inner(&fv, &gv))
    }

    pub fn indicator(&self, set: &MeasurableSet) -> Result<DVector<f64>> {
        self.check_set(set)?;
        let mut v = DVector::zeros(self.len());
        for i in set.iter() {
            v[i] = 1.0;
        }
        Ok(v)
    }
}

/// A subset of atom indices. Stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct MeasurableSet {
    members: Vec<usize>,
}

impl MeasurableSet {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn singleton(atom: usize) -> Self {
        Self {
            members: vec![atom],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            members: (0..n).collect(),
        }
    }

    /// Set whose members are the bits of `mask` below `n`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        Self {
            members: (0..n).filter(|&i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, atom: usize) -> bool {
        self.members.binary_search(&atom).is_ok()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.members.last().copied()
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.members.len() && j < other.members.len() {
            match self.members[i].cmp(&other.members[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.members[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        Self { members: out }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::new(self.iter().chain(other.iter()))
    }

    pub fn is_disjoint(&self, other: &Self) -> bool {
        self.intersection(other).is_empty()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.iter().all(|i| other.contains(i))
    }
}

impl fmt::Display for MeasurableSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.members.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// A finite linear combination of indicator functions.
///
/// Equality is decided on the pointwise form, so `χ_{a,b}` and
/// `χ_{a} + χ_{b}` compare equal.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimpleFunction {
    terms: Vec<(f64, MeasurableSet)>,
}

impl SimpleFunction {
    pub fn new(terms: Vec<(f64, MeasurableSet)>) -> Self {
        Self { terms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn indicator(set: MeasurableSet) -> Self {
        Self {
            terms: vec![(1.0, set)],
        }
    }

    pub fn terms(&self) -> &[(f64, MeasurableSet)] {
        &self.terms
    }

    pub fn push(&mut self, coefficient: f64, set: MeasurableSet) {
        self.terms.push((coefficient, set));
    }

    pub fn sets(&self) -> impl Iterator<Item = &MeasurableSet> {
        self.terms.iter().map(|(_, s)| s)
    }

    /// Value at every atom of `space`.
    pub fn pointwise(&self, space: &MeasureSpace) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(space.len());
        for (c, set) in &self.terms {
            space.check_set(set).map_err(|e| match e {
                Error::InvalidSet { index, len } => Error::Domain(format!(
                    "simple function references atom {index} outside a space of {len} atoms"
                )),
                e => e,
            })?;
            for i in set.iter() {
                v[i] += c;
            }
        }
        Ok(v)
    }

    /// Sparse pointwise form with zero values dropped.
    pub fn canonical(&self) -> BTreeMap<usize, f64> {
        let mut map = BTreeMap::new();
        for (c, set) in &self.terms {
            for i in set.iter() {
                *map.entry(i).or_insert(0.0) += c;
            }
        }
        map.retain(|_, v| *v != 0.0);
        map
    }
}

impl PartialEq for SimpleFunction {
    fn eq(&self, other: &Self) -> bool {
        let a = self.canonical();
        let b = other.canonical();
        let keys: std::collections::BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
        keys.into_iter().all(|k| {
            let x = a.get(&k).copied().unwrap_or(0.0);
            let y = b.get(&k).copied().unwrap_or(0.0);
            (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
        })
    }
}

/// True iff `blocks` are pairwise disjoint and cover every atom of `space`.
pub fn is_partition(space: &MeasureSpace, blocks: &[MeasurableSet]) -> bool {
    let mut seen = vec![false; space.len()];
    for block in blocks {
        for i in block.iter() {
            if i >= space.len() || seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// A partition of the ground set into disjoint blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    n_atoms: usize,
    blocks: Vec<MeasurableSet>,
}

impl Partition {
    pub fn new(space: &MeasureSpace, blocks: Vec<MeasurableSet>) -> Result<Self> {
        if !is_partition(space, &blocks) {
            return Err(Error::Domain(
                "blocks are not a disjoint cover of the space".into(),
            ));
        }
        Ok(Self {
            n_atoms: space.len(),
            blocks,
        })
    }

    /// The one-block partition `{X}`.
    pub fn trivial(space: &MeasureSpace) -> Self {
        Self {
            n_atoms: space.len(),
            blocks: vec![space.full_set()],
        }
    }

    pub fn singletons(space: &MeasureSpace) -> Self {
        Self {
            n_atoms: space.len(),
            blocks: space.singletons(),
        }
    }

    pub fn blocks(&self) -> &[MeasurableSet] {
        &self.blocks
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// True iff every block of `fine` sits inside some block of `self`.
    pub fn is_refined_by(&self, fine: &Partition) -> Result<bool> {
        is_refinement(self, fine)
    }
}

/// True iff every block of `fine` is contained in a block of `coarse`.
pub fn is_refinement(coarse: &Partition, fine: &Partition) -> Result<bool> {
    if coarse.n_atoms != fine.n_atoms {
        return Err(Error::Domain(format!(
            "partitions over {} and {} atoms",
            coarse.n_atoms, fine.n_atoms
        )));
    }
    let mut owner = vec![usize::MAX; coarse.n_atoms];
    for (b, block) in coarse.blocks.iter().enumerate() {
        for i in block.iter() {
            owner[i] = b;
        }
    }
    Ok(fine.blocks.iter().all(|block| {
        let mut it = block.iter();
        match it.next() {
            None => true,
            Some(first) => {
                let b = owner[first];
                it.all(|i| owner[i] == b)
            }
        }
    }))
}

/// Partitions ordered so that each one refines its predecessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionChain {
    levels: Vec<Partition>,
}

impl PartitionChain {
    pub fn new(levels: Vec<Partition>) -> Result<Self> {
        for (k, pair) in levels.windows(2).enumerate() {
            if !is_refinement(&pair[0], &pair[1])? {
                return Err(Error::Ordering(k + 1));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[Partition] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
