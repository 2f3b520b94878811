//! Reversible substochastic Markov chains on the atoms of a measure space
//! and their Green kernels.
//!
//! Rows of `P` may sum to less than one; the deficit is killing mass. A
//! finite chain is transient exactly when the ν-symmetrized transition
//! operator has norm below one, in which case `G = Σ_n Pⁿ = (I − P)^{-1}`,
//! `K(A, B) = Σ_{x∈A} ν(x) G(x, B)` is positive definite, and
//! `k_A = (I − P)^{-1/2} χ_A` factorizes it in `L²(ν)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::SetKernel;
use crate::linalg;
use crate::measure::{MeasurableSet, MeasureSpace};

/// Row sums may exceed one by this much before a chain is rejected.
pub const ROW_SUM_SLACK: f64 = 1e-12;
/// Transience requires a spectral bound below `1 - TRANSIENCE_MARGIN`.
pub const TRANSIENCE_MARGIN: f64 = 1e-10;
/// Default detailed-balance tolerance, relative to `max ν(x) P[x,y]`.
pub const REVERSIBILITY_TOL: f64 = 1e-12;
/// Entrywise tail bound for the truncated Neumann series.
pub const SERIES_TAIL: f64 = 1e-10;
/// Random test vectors used by [`MarkovChain::contractivity_check`].
pub const CONTRACTIVITY_PROBES: usize = 1000;

/// A substochastic transition matrix over the atoms of a space with strictly
/// positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    space: MeasureSpace,
    p: DMatrix<f64>,
}

impl MarkovChain {
    pub fn new(space: &MeasureSpace, p: DMatrix<f64>) -> Result<Self> {
        let n = space.len();
        if p.shape() != (n, n) {
            return Err(Error::InvalidChain(format!(
                "transition matrix is {}x{}, space has {n} atoms",
                p.nrows(),
                p.ncols()
            )));
        }
        if let Some(x) = space.weights().iter().position(|&w| w <= 0.0) {
            return Err(Error::InvalidChain(format!(
                "atom `{}` has zero weight",
                space.atoms()[x]
            )));
        }
        for x in 0..n {
            let row = p.row(x);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidChain(format!(
                    "row {x} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + ROW_SUM_SLACK {
                return Err(Error::InvalidChain(format!("row {x} sums to {sum} > 1")));
            }
        }
        Ok(Self {
            space: space.clone(),
            p,
        })
    }

    /// Random walk on a weighted graph with killing. Each edge `(x, y, c)`
    /// adds conductance `c` between `x` and `y`; `ν(x) = Σ_y c_xy + kill(x)`
    /// and `P[x, y] = c_xy / ν(x)`. Reversible by construction.
    pub fn from_conductances(
        atoms: Vec<String>,
        edges: &[(usize, usize, f64)],
        kill: &[f64],
    ) -> Result<Self> {
        let n = atoms.len();
        if kill.len() != n {
            return Err(Error::InvalidChain(format!(
                "{} killing masses for {n} atoms",
                kill.len()
            )));
        }
        let mut c = DMatrix::<f64>::zeros(n, n);
        for &(x, y, w) in edges {
            if x >= n || y >= n {
                return Err(Error::InvalidChain(format!("edge ({x}, {y}) out of range")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidChain(format!(
                    "conductance {w} on edge ({x}, {y})"
                )));
            }
            c[(x, y)] += w;
            if x != y {
                c[(y, x)] += w;
            }
        }
        if kill.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::InvalidChain("negative killing mass".into()));
        }
        let weights: Vec<f64> = (0..n).map(|x| c.row(x).sum() + kill[x]).collect();
        let space = MeasureSpace::new(atoms, weights.clone())?;
        let p = DMatrix::from_fn(n, n, |x, y| {
            if weights[x] > 0.0 {
                c[(x, y)] / weights[x]
            } else {
                0.0
            }
        });
        Self::new(&space, p)
    }

    pub fn space(&self) -> &MeasureSpace {
        &self.space
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `max |ν(x) P[x,y] − ν(y) P[y,x]| ≤ tol`.
    pub fn check_reversibility(&self, tol: f64) -> bool {
        self.detailed_balance_defect() <= tol
    }

    pub fn detailed_balance_defect(&self) -> f64 {
        let flow = crate::kernel::weighted_form(&self.space, &self.p);
        linalg::max_abs_diff(&flow, &flow.transpose())
    }

    fn is_reversible(&self) -> bool {
        let flow = crate::kernel::weighted_form(&self.space, &self.p);
        let scale = linalg::max_abs(&flow).max(f64::MIN_POSITIVE);
        self.detailed_balance_defect() <= REVERSIBILITY_TOL * scale.max(1.0)
    }

    /// `D^{1/2} P D^{-1/2}`, the matrix of `P` in a ν-orthonormal basis.
    pub fn nu_similar(&self) -> DMatrix<f64> {
        let sq: Vec<f64> = self.space.weights().iter().map(|w| w.sqrt()).collect();
        let n = self.space.len();
        DMatrix::from_fn(n, n, |x, y| sq[x] * self.p[(x, y)] / sq[y])
    }

    /// Largest ν-singular value of `P`, its operator norm on `L²(ν)`.
    pub fn spectral_bound(&self) -> f64 {
        linalg::spectral_norm(&self.nu_similar())
    }

    /// Returns the spectral bound ρ when `ρ < 1 − 1e-10`.
    pub fn check_transient(&self) -> Result<f64> {
        let rho = self.spectral_bound();
        if rho < 1.0 - TRANSIENCE_MARGIN {
            Ok(rho)
        } else {
            Err(Error::NotTransient {
                spectral_bound: rho,
            })
        }
    }

    /// Green function `G = (I − P)^{-1}`, cross-checked against the
    /// truncated series `Σ_{n ≤ N} Pⁿ`.
    pub fn green(&self) -> Result<GreenData> {
        let rho = self.check_transient()?;
        let n = self.space.len();
        let id = DMatrix::<f64>::identity(n, n);
        let a = &id - &self.p;
        let g = a.clone().lu().solve(&id).ok_or(Error::NotTransient {
            spectral_bound: rho,
        })?;
        let identity_residual = linalg::max_abs_diff(&(&a * &g), &id);

        let w = self.space.weights();
        let ratio = (w.iter().copied().fold(0.0, f64::max)
            / w.iter().copied().fold(f64::INFINITY, f64::min))
        .sqrt();
        let (series, terms) = neumann_series(&self.p, |terms| {
            ratio * rho.powf(terms as f64) / (1.0 - rho) <= SERIES_TAIL
        });
        let series_deviation = linalg::max_abs_diff(&series, &g);
        Ok(GreenData {
            g,
            spectral_bound: rho,
            series_terms: terms,
            series_deviation,
            identity_residual,
        })
    }

    /// `|⟨φ, Pφ⟩_ν| ≤ ‖φ‖²_ν` on random probes and `‖P‖_{L²(ν)} ≤ 1`, each
    /// within 1e-10.
    pub fn contractivity_check(&self, seed: u64) -> bool {
        if self.spectral_bound() > 1.0 + 1e-10 {
            return false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.space.len();
        (0..CONTRACTIVITY_PROBES).all(|_| {
            let phi = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let p_phi = &self.p * &phi;
            let norm = self.space.norm_sq(&phi);
            self.space.inner(&phi, &p_phi).abs() <= norm + 1e-10 * norm.max(1.0)
        })
    }

    /// Spectrum of `I − P` in the ν-geometry (eigenvalues, eigenvectors of
    /// the symmetrized matrix), requiring reversibility and transience.
    fn laplacian_eigen(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if !self.is_reversible() {
            return Err(Error::InvalidChain(format!(
                "not reversible: detailed-balance defect {:e}",
                self.detailed_balance_defect()
            )));
        }
        let rho = self.check_transient()?;
        let n = self.space.len();
        let lap = DMatrix::<f64>::identity(n, n) - self.nu_similar();
        let eig = linalg::sym_eigen(&lap);
        if eig.eigenvalues.min() < TRANSIENCE_MARGIN {
            return Err(Error::NotTransient {
                spectral_bound: rho,
            });
        }
        Ok((eig.eigenvalues, eig.eigenvectors))
    }

    /// Smallest eigenvalue of `I − P` on `L²(ν)`.
    pub fn laplacian_gap(&self) -> Result<f64> {
        Ok(self.laplacian_eigen()?.0.min())
    }

    /// `(I − P)^{-1/2}` as an atom matrix, via the ν-symmetrized
    /// eigendecomposition.
    pub fn green_root(&self) -> Result<DMatrix<f64>> {
        let (values, vectors) = self.laplacian_eigen()?;
        let inv_sqrt = values.map(|l| 1.0 / l.sqrt());
        let sym = &vectors * DMatrix::from_diagonal(&inv_sqrt) * vectors.transpose();
        let sq: Vec<f64> = self.space.weights().iter().map(|w| w.sqrt()).collect();
        let n = self.space.len();
        Ok(DMatrix::from_fn(n, n, |x, y| sym[(x, y)] * sq[y] / sq[x]))
    }
}

/// Sums `Σ_{n < N} Pⁿ` by doubling (`S_{2m} = S_m + P^m S_m`) until
/// `done(N)` holds. Returns the sum and `N`.
fn neumann_series(p: &DMatrix<f64>, done: impl Fn(u64) -> bool) -> (DMatrix<f64>, u64) {
    let n = p.nrows();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut power = p.clone();
    let mut terms: u64 = 1;
    while !done(terms) && terms < (1u64 << 62) {
        sum = &sum + &power * &sum;
        power = &power * &power;
        terms *= 2;
    }
    (sum, terms)
}

/// Green function of a transient chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenData {
    /// `G = (I − P)^{-1}`, from a linear solve.
    pub g: DMatrix<f64>,
    /// Largest ν-singular value of `P`.
    pub spectral_bound: f64,
    /// Number of series terms `N + 1` used for the cross-check.
    pub series_terms: u64,
    /// `max |Σ_{n ≤ N} Pⁿ − G|`.
    pub series_deviation: f64,
    /// `max |(I − P) G − I|`.
    pub identity_residual: f64,
}

/// The Green kernel `K(A, B) = Σ_{x∈A} ν(x) G(x, B)`.
pub fn green_kernel(chain: &MarkovChain) -> Result<SetKernel> {
    if !chain.is_reversible() {
        return Err(Error::InvalidChain(format!(
            "not reversible: detailed-balance defect {:e}",
            chain.detailed_balance_defect()
        )));
    }
    let data = chain.green()?;
    Ok(SetKernel::green_induced(chain.space(), data.g))
}

/// `k_A = (I − P)^{-1/2} χ_A`.
pub fn k_from_green(chain: &MarkovChain, a: &MeasurableSet) -> Result<DVector<f64>> {
    let root = chain.green_root()?;
    Ok(root * chain.space().indicator(a)?)
}
