//! Positive definite kernels indexed by the measurable sets of a finite
//! weighted measure space.
//!
//! The crate covers four layers:
//!
//! - [`measure`]: the measure space `(X, ν)`, sets, simple functions, partitions.
//! - [`kernel`]: set kernels `K(A, B)` (white-noise, rank-one, operator- and
//!   Green-induced) with Gram-matrix positivity checks.
//! - [`factorization`]: realizing `K(A, B) = ⟨k_A, k_B⟩_{L²(ν)}` through the
//!   operator `T` with `⟨χ_A, Tχ_B⟩ = K(A, B)` and `k_A = T^{1/2} χ_A`, together
//!   with the isometry `b: ℋ(K) → L²(ν)` and its adjoint.
//! - [`markov`]: reversible substochastic chains, their Green function and the
//!   factorization `k_A = (I − P)^{-1/2} χ_A`.
//! - [`field`]: sampling the Gaussian field `W_A` with covariance `K`, Ito
//!   integrals of simple functions and projection second moments along
//!   refining partitions.

pub mod error;
pub mod factorization;
pub mod field;
pub mod kernel;
pub mod linalg;
pub mod markov;
pub mod measure;
pub mod random;

pub use error::{Error, Result};
pub use factorization::{Factorization, FactorizationExport, RkhsElement};
pub use field::{FieldSampler, ItoResult, MonteCarlo};
pub use kernel::{GramMatrix, SetKernel};
pub use markov::{GreenData, MarkovChain};
pub use measure::{MeasurableSet, MeasureSpace, Partition, PartitionChain, SimpleFunction};
