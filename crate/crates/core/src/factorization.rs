//! Realizing a set kernel in `L²(ν)`.
//!
//! A positive definite kernel `K` whose slices `K(·, B)` vanish on ν-null sets
//! has densities `g(x, B) = K({x}, B) / ν({x})`. Collecting them gives an
//! operator `T` on atom vectors with `⟨χ_A, T χ_B⟩_ν = K(A, B)`; `T` is
//! ν-selfadjoint and positive, so `k_A = T^{1/2} χ_A` satisfies
//! `K(A, B) = ⟨k_A, k_B⟩_ν`. Conversely any such family `{k_A}` gives back
//! `T = S*S` with `S χ_A = k_A`, and the densities are `g(·, B) = T χ_B`.
//!
//! Null atoms carry no `L²(ν)` mass: rows and columns of `T` and its root are
//! zero there, as are densities and `k_A`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SetKernel;
use crate::linalg;
use crate::measure::{MeasurableSet, MeasureSpace, SimpleFunction};

/// `K(A, A)` above this on a null set counts as an absolute-continuity
/// violation.
pub const ABSOLUTE_CONTINUITY_TOL: f64 = 1e-12;
/// Relative threshold below which eigenvalues of a PSD operator are clamped.
pub const CLAMP_REL: f64 = 1e-12;
/// Relative threshold below which a negative eigenvalue is real indefiniteness.
pub const INDEFINITE_REL: f64 = 1e-8;
/// Residual allowed by [`realize`] on singleton pairs.
pub const REALIZE_TOL: f64 = 1e-8;
/// Residual allowed between recovered and direct densities.
pub const DENSITY_TOL: f64 = 1e-9;
/// Orthonormality tolerance for [`Factorization::onb_factorization`].
pub const ONB_TOL: f64 = 1e-10;
/// Relative singular-value cutoff for range dimensions.
pub const RANK_REL: f64 = 1e-10;
/// Mass tolerance for [`verify_pushforward`].
pub const PUSHFORWARD_TOL: f64 = 1e-12;

/// Null sets on which a kernel does not vanish.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbsoluteContinuityReport {
    /// `(A, K(A, A))` for every probed null set with `K(A, A) > tol`.
    pub violations: Vec<(MeasurableSet, f64)>,
}

impl AbsoluteContinuityReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Probes `probe_sets` and every zero-weight singleton for sets with
/// `ν(A) = 0` but `K(A, A) > tol`. By the Schwarz inequality `K(A, A) = 0`
/// already forces `K(A, B) = 0` for every `B`.
pub fn check_absolute_continuity(
    kernel: &SetKernel,
    probe_sets: &[MeasurableSet],
    tol: f64,
) -> Result<AbsoluteContinuityReport> {
    let space = kernel.space();
    let mut candidates: Vec<MeasurableSet> = probe_sets.to_vec();
    candidates.extend(space.null_atoms().into_iter().map(MeasurableSet::singleton));
    let mut seen = std::collections::HashSet::new();
    let mut violations = Vec::new();
    for a in candidates {
        if !seen.insert(a.clone()) {
            continue;
        }
        if space.measure(&a)? == 0.0 {
            let kaa = kernel.eval(&a, &a)?;
            if kaa > tol {
                violations.push((a, kaa));
            }
        }
    }
    Ok(AbsoluteContinuityReport { violations })
}

fn require_absolute_continuity(kernel: &SetKernel, probes: &[MeasurableSet]) -> Result<()> {
    let report = check_absolute_continuity(kernel, probes, ABSOLUTE_CONTINUITY_TOL)?;
    if report.holds() {
        Ok(())
    } else {
        Err(Error::NoDensity {
            violations: report.violations.len(),
        })
    }
}

/// Density `g(·, B)` of `A ↦ K(A, B)` with respect to ν, as an atom vector.
pub fn radon_nikodym_density(kernel: &SetKernel, b: &MeasurableSet) -> Result<DVector<f64>> {
    require_absolute_continuity(kernel, std::slice::from_ref(b))?;
    let space = kernel.space();
    space.check_set(b)?;
    Ok(DVector::from_fn(space.len(), |x, _| {
        let w = space.weight(x);
        if w > 0.0 {
            kernel.value(&MeasurableSet::singleton(x), b) / w
        } else {
            0.0
        }
    }))
}

/// `M = D^{1/2} T D^{-1/2}` restricted to positive atoms, with the list of
/// positive atom indices.
fn nu_symmetrize(t: &DMatrix<f64>, space: &MeasureSpace) -> (Vec<usize>, DMatrix<f64>) {
    let pos = space.positive_atoms();
    let sq: Vec<f64> = pos.iter().map(|&i| space.weight(i).sqrt()).collect();
    let p = pos.len();
    let m = DMatrix::from_fn(p, p, |i, j| sq[i] * t[(pos[i], pos[j])] / sq[j]);
    (pos, (&m + m.transpose()) * 0.5)
}

/// Inverse of [`nu_symmetrize`]: `D^{-1/2} M D^{1/2}` embedded with zero null
/// rows and columns.
fn nu_desymmetrize(m: &DMatrix<f64>, pos: &[usize], space: &MeasureSpace) -> DMatrix<f64> {
    let n = space.len();
    let sq: Vec<f64> = pos.iter().map(|&i| space.weight(i).sqrt()).collect();
    let mut out = DMatrix::zeros(n, n);
    for (i, &pi) in pos.iter().enumerate() {
        for (j, &pj) in pos.iter().enumerate() {
            out[(pi, pj)] = m[(i, j)] * sq[j] / sq[i];
        }
    }
    out
}

/// Eigenvalues and vectors of the ν-symmetrized operator, rejecting
/// indefiniteness beyond [`INDEFINITE_REL`].
fn nu_psd_eigen(
    t: &DMatrix<f64>,
    space: &MeasureSpace,
) -> Result<(Vec<usize>, DVector<f64>, DMatrix<f64>)> {
    let (pos, m) = nu_symmetrize(t, space);
    if pos.is_empty() {
        return Ok((pos, DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let eig = linalg::sym_eigen(&m);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -INDEFINITE_REL * max.max(0.0) || (max <= 0.0 && min < 0.0) {
        return Err(Error::NotPositive {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok((pos, eig.eigenvalues, eig.eigenvectors))
}

/// The operator `T[x, y] = K({x}, {y}) / ν({x})` on positive atoms.
pub fn build_t(kernel: &SetKernel) -> Result<DMatrix<f64>> {
    require_absolute_continuity(kernel, &[])?;
    let space = kernel.space();
    let n = space.len();
    let gram = kernel.atom_gram();
    let mut t = DMatrix::zeros(n, n);
    for x in space.positive_atoms() {
        for y in space.positive_atoms() {
            t[(x, y)] = gram[(x, y)] / space.weight(x);
        }
    }
    nu_psd_eigen(&t, space)?;
    Ok(t)
}

/// The ν-positive square root `R` of a ν-selfadjoint positive `T`, with
/// `R R = T`.
pub fn sqrt_t(t: &DMatrix<f64>, space: &MeasureSpace) -> Result<DMatrix<f64>> {
    if t.shape() != (space.len(), space.len()) {
        return Err(Error::Domain(format!(
            "operator is {}x{}, space has {} atoms",
            t.nrows(),
            t.ncols(),
            space.len()
        )));
    }
    let (pos, values, vectors) = nu_psd_eigen(t, space)?;
    if pos.is_empty() {
        return Ok(DMatrix::zeros(space.len(), space.len()));
    }
    let max = values.max();
    let roots = values.map(|l| if l <= CLAMP_REL * max { 0.0 } else { l.sqrt() });
    let root_sym = &vectors * DMatrix::from_diagonal(&roots) * vectors.transpose();
    Ok(nu_desymmetrize(&root_sym, &pos, space))
}

/// ν-adjoint of an atom operator: `D^{-1} Aᵀ D` on positive atoms.
pub fn nu_adjoint(a: &DMatrix<f64>, space: &MeasureSpace) -> DMatrix<f64> {
    let n = space.len();
    let mut out = DMatrix::zeros(n, n);
    for x in space.positive_atoms() {
        for y in space.positive_atoms() {
            out[(x, y)] = a[(y, x)] * space.weight(y) / space.weight(x);
        }
    }
    out
}

/// An `L²(ν)` realization `K(A, B) = ⟨k_A, k_B⟩_ν` with `k_A = S χ_A`,
/// `S = T^{1/2}`.
#[derive(Debug, Clone)]
pub struct Factorization {
    kernel: SetKernel,
    t: DMatrix<f64>,
    s: DMatrix<f64>,
}

/// Builds `T` and its root and checks `⟨k_x, k_y⟩_ν = K({x}, {y})` on every
/// singleton pair.
pub fn realize(kernel: &SetKernel) -> Result<Factorization> {
    let t = build_t(kernel)?;
    let s = sqrt_t(&t, kernel.space())?;
    let f = Factorization {
        kernel: kernel.clone(),
        t,
        s,
    };
    let gram = kernel.atom_gram();
    let scale = linalg::max_abs(&gram).max(1.0);
    let residual = linalg::max_abs_diff(&f.realized_atom_gram(), &gram);
    if residual > REALIZE_TOL * scale {
        return Err(Error::VerificationFailed {
            residual,
            bound: REALIZE_TOL * scale,
        });
    }
    Ok(f)
}

/// Recovered-density comparison from [`Factorization::reverse_direction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub sets_checked: usize,
    pub max_residual: f64,
    /// Whether the kernel `⟨k_A, k_B⟩_ν` vanishes on null singletons.
    pub absolutely_continuous: bool,
}

impl Factorization {
    pub fn kernel(&self) -> &SetKernel {
        &self.kernel
    }

    pub fn space(&self) -> &MeasureSpace {
        self.kernel.space()
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// The root `S = T^{1/2}`.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// `k_A = S χ_A`.
    pub fn k(&self, a: &MeasurableSet) -> Result<DVector<f64>> {
        let chi = self.space().indicator(a)?;
        Ok(&self.s * chi)
    }

    /// `S φ` for a simple function φ.
    pub fn apply_s(&self, phi: &SimpleFunction) -> Result<DVector<f64>> {
        Ok(&self.s * phi.pointwise(self.space())?)
    }

    /// `‖S φ‖²_ν`.
    pub fn s_norm_sq(&self, phi: &SimpleFunction) -> Result<f64> {
        let v = self.apply_s(phi)?;
        Ok(self.space().norm_sq(&v))
    }

    /// `⟨S φ, S ψ⟩_ν`.
    pub fn s_inner(&self, phi: &SimpleFunction, psi: &SimpleFunction) -> Result<f64> {
        let a = self.apply_s(phi)?;
        let b = self.apply_s(psi)?;
        Ok(self.space().inner(&a, &b))
    }

    fn realized_atom_gram(&self) -> DMatrix<f64> {
        // columns of S are k_{x}; ⟨k_x, k_y⟩_ν = (Sᵀ D S)[x, y]
        let w = DVector::from_column_slice(self.space().weights());
        let ds = DMatrix::from_fn(self.s.nrows(), self.s.ncols(), |i, j| w[i] * self.s[(i, j)]);
        self.s.transpose() * ds
    }

    /// Recomputes `g(·, B) = S* S χ_B` from the factor alone and compares it
    /// with the direct density of `K(·, B)` for every singleton and every set
    /// in `family`.
    pub fn reverse_direction(&self, family: &[MeasurableSet]) -> Result<DensityReport> {
        let space = self.space();
        let s_star = nu_adjoint(&self.s, space);
        let t_rec = &s_star * &self.s;
        let mut sets = space.singletons();
        sets.extend(family.iter().cloned());
        let mut max_residual = 0.0_f64;
        for b in &sets {
            let recovered = &t_rec * space.indicator(b)?;
            let direct = radon_nikodym_density(&self.kernel, b)?;
            let mut r = 0.0_f64;
            for x in space.positive_atoms() {
                r = r.max((recovered[x] - direct[x]).abs());
            }
            max_residual = max_residual.max(r);
        }
        let absolutely_continuous = space.null_atoms().into_iter().all(|x| {
            let k = &self.s.column(x);
            space.norm_sq(&k.into_owned()) <= ABSOLUTE_CONTINUITY_TOL
        });
        if max_residual > DENSITY_TOL {
            return Err(Error::Inconsistent {
                residual: max_residual,
                bound: DENSITY_TOL,
            });
        }
        Ok(DensityReport {
            sets_checked: sets.len(),
            max_residual,
            absolutely_continuous,
        })
    }

    /// `b(Σ α_i K(·, A_i)) = Σ α_i k_{A_i}`.
    pub fn isometry_b(&self, f: &RkhsElement) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.space().len());
        for (c, a) in &f.terms {
            out += self.k(a)? * *c;
        }
        Ok(out)
    }

    /// `(b* φ)(A) = ⟨φ, k_A⟩_ν`.
    pub fn coisometry_b_star(&self, phi: &DVector<f64>, a: &MeasurableSet) -> Result<f64> {
        self.check_vector(phi)?;
        Ok(self.space().inner(phi, &self.k(a)?))
    }

    /// `b* φ` as an element of `ℋ(K)`, expanded over the positive-weight
    /// singletons. The coefficients solve `Gram c = (⟨φ, k_x⟩_ν)_x` in the
    /// least-squares sense, so `Σ c_x k_x` is the projection of φ onto the
    /// range of `b`.
    pub fn coisometry_element(&self, phi: &DVector<f64>) -> Result<RkhsElement> {
        self.check_vector(phi)?;
        let space = self.space();
        let singles: Vec<MeasurableSet> = space
            .positive_atoms()
            .into_iter()
            .map(MeasurableSet::singleton)
            .collect();
        let gram = self.kernel.gram(&singles)?;
        let rhs = DVector::from_iterator(
            singles.len(),
            singles
                .iter()
                .map(|x| self.coisometry_b_star(phi, x))
                .collect::<Result<Vec<_>>>()?,
        );
        let coef = linalg::sym_pinv(&gram.entries, RANK_REL) * rhs;
        Ok(RkhsElement::new(
            coef.iter().copied().zip(singles).collect(),
        ))
    }

    /// Parseval sum `Σ_n ⟨φ_n, k_A⟩_ν ⟨k_B, φ_n⟩_ν` over an orthonormal basis
    /// of `L²(ν)`.
    pub fn onb_factorization(
        &self,
        basis: &[DVector<f64>],
        a: &MeasurableSet,
        b: &MeasurableSet,
    ) -> Result<f64> {
        check_onb(self.space(), basis)?;
        let ka = self.k(a)?;
        let kb = self.k(b)?;
        let space = self.space();
        Ok(basis
            .iter()
            .map(|phi| space.inner(phi, &ka) * space.inner(&kb, phi))
            .sum())
    }

    /// Dimension of `span{k_A : A ∈ family ∪ singletons}` in `L²(ν)`.
    pub fn b_range_dimension(&self, family: &[MeasurableSet]) -> Result<usize> {
        let space = self.space();
        let mut sets = space.singletons();
        sets.extend(family.iter().cloned());
        let n = space.len();
        let mut m = DMatrix::zeros(n, sets.len());
        for (j, a) in sets.iter().enumerate() {
            let k = self.k(a)?;
            for x in 0..n {
                m[(x, j)] = space.weight(x).sqrt() * k[x];
            }
        }
        Ok(linalg::numerical_rank(&m, RANK_REL))
    }

    /// Export with `k_A` for every set in `family`.
    pub fn export(&self, family: &[MeasurableSet]) -> Result<FactorizationExport> {
        let space = self.space();
        // `+ 0.0` turns -0.0 into 0.0
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().map(|v| v + 0.0).collect())
                .collect()
        };
        let k_vectors = family
            .iter()
            .map(|a| {
                Ok(KVector {
                    set: a.iter().map(|i| space.atoms()[i].clone()).collect(),
                    values: self.k(a)?.iter().map(|v| v + 0.0).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FactorizationExport {
            kernel: self.kernel.name().to_string(),
            atoms: space.atoms().to_vec(),
            weights: space.weights().to_vec(),
            t: rows(&self.t),
            k_vectors,
        })
    }

    /// Rebuilds a factorization from an export; the kernel becomes the
    /// operator kernel of the exported `T`.
    pub fn from_export(export: &FactorizationExport) -> Result<Self> {
        let space = MeasureSpace::new(export.atoms.clone(), export.weights.clone())?;
        let n = space.len();
        if export.t.len() != n || export.t.iter().any(|r| r.len() != n) {
            return Err(Error::Domain(format!("exported T is not {n}x{n}")));
        }
        let t = DMatrix::from_fn(n, n, |i, j| export.t[i][j]);
        let kernel = SetKernel::operator(&space, t)?;
        realize(&kernel)
    }

    fn check_vector(&self, phi: &DVector<f64>) -> Result<()> {
        if phi.len() != self.space().len() {
            return Err(Error::Domain(format!(
                "vector of length {} over a space of {} atoms",
                phi.len(),
                self.space().len()
            )));
        }
        Ok(())
    }
}

fn check_onb(space: &MeasureSpace, basis: &[DVector<f64>]) -> Result<()> {
    let dim = space.positive_atoms().len();
    if basis.len() != dim {
        return Err(Error::InvalidBasis(format!(
            "{} vectors for a space of dimension {dim}",
            basis.len()
        )));
    }
    for (i, u) in basis.iter().enumerate() {
        if u.len() != space.len() {
            return Err(Error::InvalidBasis(format!("vector {i} has wrong length")));
        }
        for (j, v) in basis.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = (space.inner(u, v) - target).abs();
            if d > ONB_TOL {
                return Err(Error::InvalidBasis(format!(
                    "⟨φ_{i}, φ_{j}⟩ deviates from {target} by {d:e}"
                )));
            }
        }
    }
    Ok(())
}

/// `{χ_x / √ν(x)}` over positive-weight atoms.
pub fn singleton_onb(space: &MeasureSpace) -> Vec<DVector<f64>> {
    space
        .positive_atoms()
        .into_iter()
        .map(|x| {
            let mut v = DVector::zeros(space.len());
            v[x] = 1.0 / space.weight(x).sqrt();
            v
        })
        .collect()
}

/// Maps the columns of a Euclidean-orthogonal `p x p` matrix (p = number of
/// positive atoms) to an `L²(ν)` orthonormal basis via `D^{-1/2}`.
pub fn onb_from_orthogonal(space: &MeasureSpace, q: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let pos = space.positive_atoms();
    if q.shape() != (pos.len(), pos.len()) {
        return Err(Error::InvalidBasis(format!(
            "expected a {0}x{0} matrix",
            pos.len()
        )));
    }
    Ok((0..q.ncols())
        .map(|j| {
            let mut v = DVector::zeros(space.len());
            for (i, &x) in pos.iter().enumerate() {
                v[x] = q[(i, j)] / space.weight(x).sqrt();
            }
            v
        })
        .collect())
}

/// `F = Σ α_i K(·, A_i)` in the reproducing kernel Hilbert space of a kernel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RkhsElement {
    pub terms: Vec<(f64, MeasurableSet)>,
}

impl RkhsElement {
    pub fn new(terms: Vec<(f64, MeasurableSet)>) -> Self {
        Self { terms }
    }

    pub fn kernel_section(a: MeasurableSet) -> Self {
        Self {
            terms: vec![(1.0, a)],
        }
    }

    fn split(&self) -> (Vec<f64>, Vec<MeasurableSet>) {
        self.terms.iter().cloned().unzip()
    }

    /// `F(A) = Σ α_i K(A, A_i)`.
    pub fn eval(&self, kernel: &SetKernel, a: &MeasurableSet) -> Result<f64> {
        self.terms
            .iter()
            .map(|(c, ai)| Ok(c * kernel.eval(a, ai)?))
            .sum()
    }

    /// `⟨F, G⟩_{ℋ(K)} = Σ α_i β_j K(A_i, B_j)`.
    pub fn inner(&self, other: &Self, kernel: &SetKernel) -> Result<f64> {
        let mut s = 0.0;
        for (a, sa) in &self.terms {
            for (b, sb) in &other.terms {
                s += a * b * kernel.eval(sa, sb)?;
            }
        }
        Ok(s)
    }

    /// `‖F‖²_{ℋ(K)}` through the Gram matrix of the terms.
    pub fn norm_sq(&self, kernel: &SetKernel) -> Result<f64> {
        let (coef, sets) = self.split();
        let g = kernel.gram(&sets)?;
        Ok(g.bilinear(&coef, &coef))
    }
}

/// Exported factorization: atoms, weights, `T`, and `k_A` for a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationExport {
    pub kernel: String,
    pub atoms: Vec<String>,
    pub weights: Vec<f64>,
    /// Row-major.
    pub t: Vec<Vec<f64>>,
    pub k_vectors: Vec<KVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KVector {
    /// Atom ids of `A`.
    pub set: Vec<String>,
    /// `k_A` per atom.
    pub values: Vec<f64>,
}

/// True iff pushing `source`'s weights along `map` (source atom index to
/// target atom index) reproduces `target`'s weights within 1e-12.
pub fn verify_pushforward(
    source: &MeasureSpace,
    target: &MeasureSpace,
    map: &[usize],
) -> Result<bool> {
    if map.len() != source.len() {
        return Err(Error::InvalidMap(format!(
            "map covers {} of {} source atoms",
            map.len(),
            source.len()
        )));
    }
    let mut mass = vec![0.0; target.len()];
    for (x, &y) in map.iter().enumerate() {
        if y >= target.len() {
            return Err(Error::InvalidMap(format!(
                "source atom {x} maps to {y}, outside a target of {} atoms",
                target.len()
            )));
        }
        mass[y] += source.weight(x);
    }
    Ok(mass
        .iter()
        .zip(target.weights())
        .all(|(m, w)| (m - w).abs() <= PUSHFORWARD_TOL))
}
