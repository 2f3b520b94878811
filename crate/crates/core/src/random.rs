//! Random instances for experiments: spaces, positive operators, reversible
//! chains, simple functions and refinement chains.

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::kernel::SetKernel;
use crate::markov::MarkovChain;
use crate::measure::{MeasurableSet, MeasureSpace, Partition, PartitionChain, SimpleFunction};

/// Space of `n` atoms with weights uniform in `[lo, hi]`.
pub fn space<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> MeasureSpace {
    let weights = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    MeasureSpace::from_weights(weights).expect("positive weights")
}

/// A ν-selfadjoint positive atom matrix `M = D^{-1} B Bᵀ` with `B` Gaussian
/// of size `n x rank`, zero on rows and columns of null atoms.
pub fn nu_psd_matrix<R: Rng>(rng: &mut R, space: &MeasureSpace, rank: usize) -> DMatrix<f64> {
    let n = space.len();
    let b = DMatrix::<f64>::from_fn(n, rank, |_, _| StandardNormal.sample(rng));
    let form = &b * b.transpose();
    let form = (&form + form.transpose()) * 0.5;
    DMatrix::from_fn(n, n, |x, y| {
        let w = space.weight(x);
        if w > 0.0 && space.weight(y) > 0.0 {
            form[(x, y)] / w
        } else {
            0.0
        }
    })
}

pub fn operator_kernel<R: Rng>(
    rng: &mut R,
    space: &MeasureSpace,
    rank: usize,
) -> Result<SetKernel> {
    SetKernel::operator(space, nu_psd_matrix(rng, space, rank))
}

/// Random walk on a random connected weighted graph over `n` atoms with
/// conductances in `[0.1, 1]` and killing mass of at least `min_kill` on one
/// randomly chosen atom (plus occasional small killing elsewhere).
pub fn conductance_chain<R: Rng>(rng: &mut R, n: usize, min_kill: f64) -> Result<MarkovChain> {
    let atoms: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let mut edges = Vec::new();
    // spanning path keeps the graph connected
    for x in 1..n {
        let y = rng.random_range(0..x);
        edges.push((x, y, rng.random_range(0.1..=1.0)));
    }
    for x in 0..n {
        for y in x + 1..n {
            if rng.random_bool(0.3) {
                edges.push((x, y, rng.random_range(0.1..=1.0)));
            }
        }
    }
    let mut kill = vec![0.0; n];
    for k in kill.iter_mut() {
        if rng.random_bool(0.2) {
            *k = rng.random_range(0.0..=0.2);
        }
    }
    let killed = rng.random_range(0..n);
    kill[killed] += rng.random_range(min_kill..=min_kill + 0.5);
    MarkovChain::from_conductances(atoms, &edges, &kill)
}

/// Nonempty random subset of a space.
pub fn nonempty_set<R: Rng>(rng: &mut R, n: usize) -> MeasurableSet {
    loop {
        let s = MeasurableSet::new((0..n).filter(|_| rng.random_bool(0.5)));
        if !s.is_empty() {
            return s;
        }
    }
}

/// Simple function with `1..=max_terms` terms over sets drawn from `family`,
/// coefficients standard normal.
pub fn simple_function_over<R: Rng>(
    rng: &mut R,
    family: &[MeasurableSet],
    max_terms: usize,
) -> SimpleFunction {
    let terms = rng.random_range(1..=max_terms.max(1));
    SimpleFunction::new(
        (0..terms)
            .map(|_| {
                let set = family.choose(rng).expect("nonempty family").clone();
                (StandardNormal.sample(rng), set)
            })
            .collect(),
    )
}

/// Simple function over random subsets of an `n`-atom space.
pub fn simple_function<R: Rng>(rng: &mut R, n: usize, max_terms: usize) -> SimpleFunction {
    let terms = rng.random_range(1..=max_terms.max(1));
    SimpleFunction::new(
        (0..terms)
            .map(|_| (StandardNormal.sample(rng), nonempty_set(rng, n)))
            .collect(),
    )
}

/// Chain from `{X}` to the singleton partition, splitting one random block
/// into two at every step and keeping each intermediate level with
/// probability one half. Always has the two end levels; for `|X| ≥ 3` at
/// least one intermediate level is kept.
pub fn refinement_chain<R: Rng>(rng: &mut R, space: &MeasureSpace) -> PartitionChain {
    let n = space.len();
    let mut blocks = vec![space.full_set()];
    let mut levels = vec![Partition::trivial(space)];
    let mut intermediates = Vec::new();
    while blocks.len() < n {
        let splittable: Vec<usize> = (0..blocks.len()).filter(|&b| blocks[b].len() > 1).collect();
        let b = *splittable.choose(rng).unwrap();
        let mut members = blocks[b].members().to_vec();
        members.shuffle(rng);
        let cut = rng.random_range(1..members.len());
        let left = MeasurableSet::new(members[..cut].iter().copied());
        let right = MeasurableSet::new(members[cut..].iter().copied());
        blocks[b] = left;
        blocks.push(right);
        if blocks.len() < n {
            intermediates.push(blocks.clone());
        }
    }
    let keep_one = if intermediates.is_empty() {
        None
    } else {
        Some(rng.random_range(0..intermediates.len()))
    };
    for (i, level) in intermediates.into_iter().enumerate() {
        if Some(i) == keep_one || rng.random_bool(0.5) {
            levels.push(Partition::new(space, level).expect("split keeps a partition"));
        }
    }
    if n > 1 {
        levels.push(Partition::singletons(space));
    }
    PartitionChain::new(levels).expect("splits refine")
}
