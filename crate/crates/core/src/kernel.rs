//! Kernels on pairs of measurable sets and their Gram matrices.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{MeasurableSet, MeasureSpace};

type KernelFn = dyn Fn(&MeasureSpace, &MeasurableSet, &MeasurableSet) -> f64 + Send + Sync;

/// How a kernel computes `K(A, B)`.
#[derive(Clone)]
pub enum KernelKind {
    /// `ν(A ∩ B)`, the white-noise covariance.
    Wiener,
    /// `ν(A) ν(B)`.
    RankOne,
    /// `|A ∩ B|`, ignores the weights. Not absolutely continuous when the
    /// space has null atoms.
    Counting,
    /// `⟨χ_A, M χ_B⟩_ν = Σ_{x∈A, y∈B} ν(x) M[x, y]`.
    Operator(Arc<DMatrix<f64>>),
    /// `Σ_{x∈A} ν(x) Σ_{y∈B} G[x, y]` for a Green matrix `G`.
    Green(Arc<DMatrix<f64>>),
    /// Arbitrary evaluator.
    Custom { name: String, f: Arc<KernelFn> },
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Wiener => write!(f, "Wiener"),
            Self::RankOne => write!(f, "RankOne"),
            Self::Counting => write!(f, "Counting"),
            Self::Operator(m) => write!(f, "Operator({}x{})", m.nrows(), m.ncols()),
            Self::Green(g) => write!(f, "Green({}x{})", g.nrows(), g.ncols()),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// A symmetric real kernel on the finite-measure sets of a space.
#[derive(Debug, Clone)]
pub struct SetKernel {
    space: MeasureSpace,
    kind: KernelKind,
}

impl SetKernel {
    pub fn wiener(space: &MeasureSpace) -> Self {
        Self {
            space: space.clone(),
            kind: KernelKind::Wiener,
        }
    }

    pub fn rank_one(space: &MeasureSpace) -> Self {
        Self {
            space: space.clone(),
            kind: KernelKind::RankOne,
        }
    }

    pub fn counting(space: &MeasureSpace) -> Self {
        Self {
            space: space.clone(),
            kind: KernelKind::Counting,
        }
    }

    /// Kernel induced by an atom matrix `M`, which must be ν-selfadjoint
    /// (`ν(x) M[x,y] = ν(y) M[y,x]`) and ν-positive semidefinite, both to
    /// `1e-10` relative to the size of `ν(x) M[x,y]`.
    pub fn operator(space: &MeasureSpace, m: DMatrix<f64>) -> Result<Self> {
        let n = space.len();
        if m.shape() != (n, n) {
            return Err(Error::InvalidOperator(format!(
                "expected a {n}x{n} matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidOperator("non-finite entry".into()));
        }
        let form = weighted_form(space, &m);
        let scale = linalg::max_abs(&form).max(1.0);
        let asym = linalg::max_abs_diff(&form, &form.transpose());
        if asym > 1e-10 * scale {
            return Err(Error::InvalidOperator(format!(
                "not ν-selfadjoint: asymmetry {asym:e}"
            )));
        }
        let (min, max) = linalg::eigen_range(&form);
        if min < -1e-10 * max.abs().max(1.0) {
            return Err(Error::InvalidOperator(format!(
                "not ν-positive: minimum eigenvalue {min:e}"
            )));
        }
        Ok(Self {
            space: space.clone(),
            kind: KernelKind::Operator(Arc::new(m)),
        })
    }

    /// Kernel `K(A,B) = Σ_{x∈A} ν(x) G(x, B)` from a Green matrix. The
    /// matrix is not validated here; see [`crate::markov::green_kernel`].
    pub fn green_induced(space: &MeasureSpace, g: DMatrix<f64>) -> Self {
        assert_eq!(g.shape(), (space.len(), space.len()));
        Self {
            space: space.clone(),
            kind: KernelKind::Green(Arc::new(g)),
        }
    }

    pub fn custom<F>(space: &MeasureSpace, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&MeasureSpace, &MeasurableSet, &MeasurableSet) -> f64 + Send + Sync + 'static,
    {
        Self {
            space: space.clone(),
            kind: KernelKind::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
        }
    }

    pub fn space(&self) -> &MeasureSpace {
        &self.space
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            KernelKind::Wiener => "wiener",
            KernelKind::RankOne => "rank_one",
            KernelKind::Counting => "counting",
            KernelKind::Operator(_) => "operator",
            KernelKind::Green(_) => "green",
            KernelKind::Custom { name, .. } => name,
        }
    }

    /// `K(A, B)`.
    pub fn eval(&self, a: &MeasurableSet, b: &MeasurableSet) -> Result<f64> {
        self.space.check_set(a)?;
        self.space.check_set(b)?;
        Ok(self.value(a, b))
    }

    /// `K(A, B)` without range checks.
    pub(crate) fn value(&self, a: &MeasurableSet, b: &MeasurableSet) -> f64 {
        let w = self.space.weights();
        match &self.kind {
            KernelKind::Wiener => a.intersection(b).iter().map(|i| w[i]).sum(),
            KernelKind::RankOne => {
                let na: f64 = a.iter().map(|i| w[i]).sum();
                let nb: f64 = b.iter().map(|i| w[i]).sum();
                na * nb
            }
            KernelKind::Counting => a.intersection(b).len() as f64,
            KernelKind::Operator(m) | KernelKind::Green(m) => a
                .iter()
                .map(|x| w[x] * b.iter().map(|y| m[(x, y)]).sum::<f64>())
                .sum(),
            KernelKind::Custom { f, .. } => f(&self.space, a, b),
        }
    }

    /// Gram matrix `(K(A_i, A_j))_{ij}` over `sets`.
    pub fn gram(&self, sets: &[MeasurableSet]) -> Result<GramMatrix> {
        for s in sets {
            self.space.check_set(s)?;
        }
        let n = sets.len();
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.value(&sets[i], &sets[j]);
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        Ok(GramMatrix {
            sets: sets.to_vec(),
            entries,
        })
    }

    /// Singleton Gram matrix `K({x}, {y})`.
    pub fn atom_gram(&self) -> DMatrix<f64> {
        let n = self.space.len();
        let singles = self.space.singletons();
        DMatrix::from_fn(n, n, |i, j| self.value(&singles[i], &singles[j]))
    }

    /// True iff the smallest eigenvalue of the Gram matrix over `sets` is at
    /// least `-tol * |trace|` (or `-tol` for a zero trace).
    pub fn check_positive_definite(&self, sets: &[MeasurableSet], tol: f64) -> Result<bool> {
        let g = self.gram(sets)?;
        Ok(g.is_positive_semidefinite(tol))
    }

    /// Positive definiteness over every singleton plus `extra`. For
    /// biadditive kernels the singletons already decide the question.
    pub fn certify_positive_definite(&self, extra: &[MeasurableSet], tol: f64) -> Result<bool> {
        let mut sets = self.space.singletons();
        sets.extend(extra.iter().cloned());
        self.check_positive_definite(&sets, tol)
    }

    /// `K(A,B)² ≤ K(A,A) K(B,B) + tol`.
    pub fn schwarz_check(&self, a: &MeasurableSet, b: &MeasurableSet, tol: f64) -> Result<bool> {
        let ab = self.eval(a, b)?;
        let aa = self.value(a, a);
        let bb = self.value(b, b);
        Ok(ab * ab <= aa * bb + tol)
    }
}

/// `Q[x, y] = ν(x) M[x, y]`, the matrix of the form `⟨f, M g⟩_ν`.
pub(crate) fn weighted_form(space: &MeasureSpace, m: &DMatrix<f64>) -> DMatrix<f64> {
    let w = space.weights();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| w[i] * m[(i, j)])
}

/// Kernel values over a finite family of sets.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub sets: Vec<MeasurableSet>,
    pub entries: DMatrix<f64>,
}

impl GramMatrix {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::eigen_range(&self.entries).0
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut ev: Vec<f64> = linalg::sym_eigen(&self.entries)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    pub fn rank(&self, rel_cutoff: f64) -> usize {
        linalg::numerical_rank(&self.entries, rel_cutoff)
    }

    pub fn is_positive_semidefinite(&self, tol: f64) -> bool {
        if self.is_empty() {
            return true;
        }
        let trace = self.entries.trace().abs();
        let slack = if trace > 0.0 { tol * trace } else { tol };
        self.min_eigenvalue() >= -slack
    }

    /// `Σ_i Σ_j α_i β_j K(A_i, A_j)`.
    pub fn bilinear(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        let n = self.len();
        assert!(alpha.len() == n && beta.len() == n);
        let mut s = 0.0;
        for (i, a) in alpha.iter().enumerate() {
            for (j, b) in beta.iter().enumerate() {
                s += a * b * self.entries[(i, j)];
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> MeasureSpace {
        MeasureSpace::from_weights(vec![1.0, 2.0, 0.5]).unwrap()
    }

    fn set(ids: &[usize]) -> MeasurableSet {
        MeasurableSet::new(ids.iter().copied())
    }

    #[test]
    fn wiener_examples() {
        let k = SetKernel::wiener(&abc());
        assert_eq!(k.eval(&set(&[0, 1]), &set(&[1, 2])).unwrap(), 2.0);
        assert_eq!(k.eval(&set(&[0]), &set(&[2])).unwrap(), 0.0);
        assert_eq!(k.eval(&set(&[0, 1]), &set(&[0, 1])).unwrap(), 3.0);
    }

    #[test]
    fn rank_one_examples() {
        let s = MeasureSpace::from_weights(vec![0.5, 0.3, 0.2]).unwrap();
        let k = SetKernel::rank_one(&s);
        assert!((k.eval(&set(&[0]), &set(&[1, 2])).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(k.eval(&MeasurableSet::empty(), &set(&[1])).unwrap(), 0.0);
        let g = k.gram(&s.singletons()).unwrap();
        assert_eq!(g.rank(1e-10), 1);
    }

    #[test]
    fn operator_identity_is_wiener() {
        let s = abc();
        let op = SetKernel::operator(&s, DMatrix::identity(3, 3)).unwrap();
        let w = SetKernel::wiener(&s);
        for a in s.all_subsets() {
            for b in s.all_subsets() {
                assert!((op.eval(&a, &b).unwrap() - w.eval(&a, &b).unwrap()).abs() < 1e-15);
            }
        }
        let u = MeasureSpace::uniform(3).unwrap();
        let two = SetKernel::operator(&u, DMatrix::identity(3, 3) * 2.0).unwrap();
        assert_eq!(two.eval(&set(&[0]), &set(&[0])).unwrap(), 2.0);
    }

    #[test]
    fn operator_rejects_bad_matrices() {
        let s = abc();
        // symmetric but not ν-selfadjoint since weights differ
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            SetKernel::operator(&s, m),
            Err(Error::InvalidOperator(_))
        ));
        let neg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert!(matches!(
            SetKernel::operator(&s, neg),
            Err(Error::InvalidOperator(_))
        ));
        assert!(SetKernel::operator(&s, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn gram_examples() {
        let s = abc();
        let w = SetKernel::wiener(&s);
        let g = w.gram(&[set(&[0]), set(&[1])]).unwrap();
        assert_eq!(
            g.entries,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])
        );
        let g = w.gram(&[set(&[0]), set(&[0, 1])]).unwrap();
        assert_eq!(
            g.entries,
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 3.0])
        );
        assert!(w.gram(&[set(&[7])]).is_err());
    }

    #[test]
    fn positive_definite_checks() {
        let s = abc();
        let w = SetKernel::wiener(&s);
        assert!(w
            .certify_positive_definite(&s.all_subsets(), 1e-10)
            .unwrap());
        let neg = SetKernel::custom(&s, "negated", |sp, a, b| {
            -a.intersection(b).iter().map(|i| sp.weight(i)).sum::<f64>()
        });
        assert!(!neg.check_positive_definite(&[set(&[0])], 1e-10).unwrap());
        let r = SetKernel::rank_one(&s);
        assert!(r.check_positive_definite(&s.all_subsets(), 1e-10).unwrap());
    }

    #[test]
    fn schwarz_examples() {
        let s = abc();
        let w = SetKernel::wiener(&s);
        assert!(w
            .schwarz_check(&set(&[0, 1]), &set(&[1, 2]), 1e-12)
            .unwrap());
        assert!(w
            .schwarz_check(&set(&[0, 2]), &set(&[0, 2]), 1e-12)
            .unwrap());
        let r = SetKernel::rank_one(&s);
        assert!(r.schwarz_check(&set(&[0]), &set(&[1, 2]), 1e-12).unwrap());
    }

    #[test]
    fn empty_gram_is_psd() {
        let w = SetKernel::wiener(&abc());
        assert!(w.check_positive_definite(&[], 1e-10).unwrap());
    }
}
