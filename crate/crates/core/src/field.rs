//! Gaussian fields indexed by sets, Ito integrals of simple functions, and
//! projection second moments along refining partitions.
//!
//! The field is realized on a finite family `A_1, …, A_m` as the centered
//! Gaussian vector with covariance `(K(A_i, A_j))`. Draw `i` is a pure
//! function of `(seed, i)`: a ChaCha stream keyed by the seed and numbered by
//! the sample index supplies the standard normals for that draw in
//! coordinate order. Monte Carlo sums are reduced over fixed-size chunks in
//! chunk order, so results do not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factorization::Factorization;
use crate::kernel::{GramMatrix, SetKernel};
use crate::linalg;
use crate::measure::{MeasurableSet, Partition, PartitionChain, SimpleFunction};

/// Samples per reduction chunk.
pub const CHUNK: usize = 4096;
/// Relative tolerance on the smallest Gram eigenvalue.
pub const COVARIANCE_TOL: f64 = 1e-10;
/// Relative pseudo-inverse cutoff for projection moments.
pub const PINV_REL: f64 = 1e-10;

const PIVOT_STOP_REL: f64 = 1e-14;

/// Sample size and seed of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub n_samples: usize,
    pub seed: u64,
}

/// A Monte Carlo estimate next to its exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoResult {
    pub estimate: f64,
    /// Sample standard deviation over `√n_samples`.
    pub std_error: f64,
    pub n_samples: usize,
    pub exact: f64,
}

impl ItoResult {
    /// `|estimate − exact| / std_error`; zero when both differences and
    /// errors vanish.
    pub fn z_score(&self) -> f64 {
        let d = (self.estimate - self.exact).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    pub fn within(&self, sigmas: f64) -> bool {
        (self.estimate - self.exact).abs() <= sigmas * self.std_error
    }
}

/// Centered Gaussian vector `(W_{A_1}, …, W_{A_m})` with covariance given by
/// a kernel's Gram matrix.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    gram: GramMatrix,
    factor: DMatrix<f64>,
    seed: u64,
}

/// Builds the sampler for `family`. Fails when the Gram matrix has an
/// eigenvalue below `-1e-10 · trace`.
pub fn build_sampler(
    kernel: &SetKernel,
    family: &[MeasurableSet],
    seed: u64,
) -> Result<FieldSampler> {
    let gram = kernel.gram(family)?;
    if !gram.is_positive_semidefinite(COVARIANCE_TOL) {
        return Err(Error::InvalidCovariance(format!(
            "Gram matrix has eigenvalue {:e}",
            gram.min_eigenvalue()
        )));
    }
    let scale = linalg::max_abs(&gram.entries);
    let bound = 1e-10 * scale;
    let mut factor = pivoted_cholesky(&gram.entries);
    if linalg::max_abs_diff(&(&factor * factor.transpose()), &gram.entries) > bound {
        factor = eigen_factor(&gram.entries);
        let residual = linalg::max_abs_diff(&(&factor * factor.transpose()), &gram.entries);
        if residual > bound {
            return Err(Error::InvalidCovariance(format!(
                "no accurate factor: residual {residual:e}"
            )));
        }
    }
    Ok(FieldSampler { gram, factor, seed })
}

/// Pivoted Cholesky `L Lᵀ = G` for a positive semidefinite `G`, stopping
/// once the largest remaining pivot drops below `1e-14 · max diag`. Columns
/// are returned ordered by pivot row, so a diagonal `G` gives a diagonal `L`.
pub fn pivoted_cholesky(g: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g.nrows();
    let mut d: Vec<f64> = (0..m).map(|i| g[(i, i)]).collect();
    let stop = PIVOT_STOP_REL * d.iter().copied().fold(0.0, f64::max);
    let mut used = vec![false; m];
    let mut cols: Vec<(usize, DVector<f64>)> = Vec::new();
    for _ in 0..m {
        let pivot = (0..m)
            .filter(|&i| !used[i])
            .max_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
        let Some(j) = pivot else { break };
        if d[j] <= stop || d[j] <= 0.0 {
            break;
        }
        used[j] = true;
        let ljj = d[j].sqrt();
        let mut col = DVector::zeros(m);
        col[j] = ljj;
        for i in 0..m {
            if used[i] {
                continue;
            }
            let mut s = g[(i, j)];
            for (_, c) in &cols {
                s -= c[i] * c[j];
            }
            col[i] = s / ljj;
            d[i] -= col[i] * col[i];
        }
        cols.push((j, col));
    }
    cols.sort_by_key(|(j, _)| *j);
    let mut l = DMatrix::zeros(m, cols.len());
    for (k, (_, c)) in cols.iter().enumerate() {
        l.set_column(k, c);
    }
    l
}

/// `V Λ₊^{1/2}` with negative eigenvalues clamped to zero and null columns
/// dropped.
fn eigen_factor(g: &DMatrix<f64>) -> DMatrix<f64> {
    if g.nrows() == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = linalg::sym_eigen(g);
    let keep: Vec<usize> = (0..g.nrows())
        .filter(|&k| eig.eigenvalues[k] > 0.0)
        .collect();
    let mut l = DMatrix::zeros(g.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        l.set_column(c, &(eig.eigenvectors.column(k) * eig.eigenvalues[k].sqrt()));
    }
    l
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if other.count == 0.0 {
            return self;
        }
        if self.count == 0.0 {
            return other;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }

    fn std_error(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.count - 1.0)).sqrt() / self.count.sqrt()
    }
}

impl FieldSampler {
    pub fn family(&self) -> &[MeasurableSet] {
        &self.gram.sets
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    /// `L` with `L Lᵀ = Gram`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(b"setkfld1");
        key
    }

    /// The standard normals behind draw `index`.
    fn normals(&self, key: [u8; 32], index: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
    }

    /// Draw `index` of `(W_{A_1}, …, W_{A_m})`.
    pub fn draw(&self, index: u64) -> DVector<f64> {
        let mut z = vec![0.0; self.rank()];
        self.normals(self.key(), index, &mut z);
        &self.factor * DVector::from_vec(z)
    }

    /// Draws `0..n`, one vector per draw.
    pub fn sample(&self, n: usize) -> Vec<Vec<f64>> {
        let key = self.key();
        let r = self.rank();
        (0..n)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| {
                let mut z = vec![0.0; r];
                self.normals(key, i as u64, &mut z);
                (&self.factor * DVector::from_vec(z))
                    .iter()
                    .copied()
                    .collect()
            })
            .collect()
    }

    /// Coefficients of φ over the family, or an error if φ uses a set
    /// outside it.
    pub fn coefficients(&self, phi: &SimpleFunction) -> Result<DVector<f64>> {
        let mut c = DVector::zeros(self.gram.len());
        for (alpha, set) in phi.terms() {
            let idx = self
                .gram
                .sets
                .iter()
                .position(|s| s == set)
                .ok_or_else(|| {
                    Error::UnsupportedFunction(format!("set {set} is not in the sampler family"))
                })?;
            c[idx] += alpha;
        }
        Ok(c)
    }

    /// `∫ φ dW = Σ α_i W_{A_i}` on one draw.
    pub fn ito_integral(&self, phi: &SimpleFunction, draw: &[f64]) -> Result<f64> {
        if draw.len() != self.gram.len() {
            return Err(Error::Domain(format!(
                "draw has {} coordinates, family has {}",
                draw.len(),
                self.gram.len()
            )));
        }
        let c = self.coefficients(phi)?;
        Ok(c.iter().zip(draw).map(|(a, w)| a * w).sum())
    }

    /// Monte Carlo estimates of `E[(∫φ dW)(∫ψ dW)]` for each pair, all from
    /// the same draws `0..n`. Returns `(mean, std_error)` per pair.
    pub fn product_moments(
        &self,
        pairs: &[(SimpleFunction, SimpleFunction)],
        n: usize,
    ) -> Result<Vec<(f64, f64)>> {
        let q = pairs.len();
        let r = self.rank();
        // rows: coefficient vectors pushed through the factor, so that
        // ∫φ dW = (cᵀ L) z
        let mut left = DMatrix::zeros(q, r);
        let mut right = DMatrix::zeros(q, r);
        for (k, (phi, psi)) in pairs.iter().enumerate() {
            left.set_row(k, &(self.coefficients(phi)?.transpose() * &self.factor));
            right.set_row(k, &(self.coefficients(psi)?.transpose() * &self.factor));
        }
        let key = self.key();
        let chunks = n.div_ceil(CHUNK);
        let partials: Vec<Vec<Moments>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Moments::default(); q];
                let mut z = vec![0.0; r];
                let start = c * CHUNK;
                let end = (start + CHUNK).min(n);
                for i in start..end {
                    self.normals(key, i as u64, &mut z);
                    for (k, m) in acc.iter_mut().enumerate() {
                        let mut u = 0.0;
                        let mut v = 0.0;
                        for (j, zj) in z.iter().enumerate() {
                            u += left[(k, j)] * zj;
                            v += right[(k, j)] * zj;
                        }
                        m.push(u * v);
                    }
                }
                acc
            })
            .collect();
        let total = partials
            .into_iter()
            .fold(vec![Moments::default(); q], |acc, part| {
                acc.into_iter().zip(part).map(|(a, b)| a.merge(b)).collect()
            });
        Ok(total.into_iter().map(|m| (m.mean, m.std_error())).collect())
    }

    /// [`ItoResult`]s for `E[(∫φ dW)(∫ψ dW)]` against the exact
    /// `⟨Sφ, Sψ⟩_ν` from a factorization of the same kernel.
    pub fn cross_moments(
        &self,
        factorization: &Factorization,
        pairs: &[(SimpleFunction, SimpleFunction)],
        n: usize,
    ) -> Result<Vec<ItoResult>> {
        let estimates = self.product_moments(pairs, n)?;
        pairs
            .iter()
            .zip(estimates)
            .map(|((phi, psi), (estimate, std_error))| {
                Ok(ItoResult {
                    estimate,
                    std_error,
                    n_samples: n,
                    exact: factorization.s_inner(phi, psi)?,
                })
            })
            .collect()
    }
}

fn distinct_sets<'a>(fs: impl IntoIterator<Item = &'a SimpleFunction>) -> Vec<MeasurableSet> {
    let mut out: Vec<MeasurableSet> = Vec::new();
    for f in fs {
        for s in f.sets() {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
    }
    out
}

/// Monte Carlo `E|∫φ dW|²` against `‖Sφ‖²_ν`.
pub fn ito_isometry_check(
    kernel: &SetKernel,
    factorization: &Factorization,
    phi: &SimpleFunction,
    mc: MonteCarlo,
) -> Result<ItoResult> {
    cross_moment_check(kernel, factorization, phi, phi, mc)
}

/// Monte Carlo `E[(∫φ dW)(∫ψ dW)]` against `⟨Sφ, Sψ⟩_ν`.
pub fn cross_moment_check(
    kernel: &SetKernel,
    factorization: &Factorization,
    phi: &SimpleFunction,
    psi: &SimpleFunction,
    mc: MonteCarlo,
) -> Result<ItoResult> {
    let family = distinct_sets([phi, psi]);
    let sampler = build_sampler(kernel, &family, mc.seed)?;
    let mut out =
        sampler.cross_moments(factorization, &[(phi.clone(), psi.clone())], mc.n_samples)?;
    Ok(out.remove(0))
}

/// Second moment of the `L²(ℙ)` projection of `∫φ dW` onto
/// `span{W_A : A ∈ partition}`: `cᵀ G⁺ c` with `c_i = ⟨Sφ, S χ_{A_i}⟩_ν` and
/// `G` the Gram matrix of the blocks.
pub fn projection_second_moment(
    kernel: &SetKernel,
    factorization: &Factorization,
    phi: &SimpleFunction,
    partition: &Partition,
) -> Result<f64> {
    let space = kernel.space();
    if partition.n_atoms() != space.len() {
        return Err(Error::Domain(format!(
            "partition over {} atoms, space has {}",
            partition.n_atoms(),
            space.len()
        )));
    }
    let s_phi = factorization.apply_s(phi)?;
    let blocks = partition.blocks();
    let c = DVector::from_iterator(
        blocks.len(),
        blocks
            .iter()
            .map(|a| Ok(space.inner(&s_phi, &factorization.k(a)?)))
            .collect::<Result<Vec<_>>>()?,
    );
    let g = kernel.gram(blocks)?;
    let pinv = linalg::sym_pinv(&g.entries, PINV_REL);
    Ok(c.dot(&(pinv * &c)))
}

/// Projection second moments along a chain of refining partitions.
pub fn refinement_sweep(
    kernel: &SetKernel,
    factorization: &Factorization,
    phi: &SimpleFunction,
    chain: &PartitionChain,
) -> Result<Vec<f64>> {
    chain
        .levels()
        .iter()
        .map(|p| projection_second_moment(kernel, factorization, phi, p))
        .collect()
}
