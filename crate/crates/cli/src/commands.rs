//! The experiment commands. Each returns a [`Report`] with one record per
//! executed check; a failed prerequisite turns dependent checks into
//! failures carrying a `detail` message instead of dropping them.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setkernel::factorization::build_t;
use setkernel::factorization::{
    check_absolute_continuity, onb_from_orthogonal, realize, singleton_onb,
};
use setkernel::field::{build_sampler, refinement_sweep};
use setkernel::linalg::max_abs_diff;
use setkernel::markov::k_from_green;
use setkernel::{
    Factorization, FactorizationExport, MarkovChain, MeasurableSet, RkhsElement, SetKernel,
    SimpleFunction,
};

use crate::config::{Experiment, KernelType};
use crate::error::{CliError, Result};
use crate::report::{CheckRecord, McRecord, Record, Report, Status};

/// Number of random ℋ(K) elements probed by the isometry check.
const ISOMETRY_PROBES: usize = 200;
/// Number of random `L²(ν)` vectors probed by the adjoint check.
const ADJOINT_PROBES: usize = 20;
/// Above this many atoms the Green factor check uses the probe sets
/// instead of every subset.
const EXHAUSTIVE_ATOMS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Factorize,
    MarkovGreen,
    Simulate,
    RefineSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Factorize => "factorize",
            Command::MarkovGreen => "markov-green",
            Command::Simulate => "simulate",
            Command::RefineSweep => "refine-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Record wall-clock time per check. Off by default so reports stay
    /// byte-identical between runs.
    pub timings: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub export: Option<FactorizationExport>,
}

struct Measured {
    value: Option<f64>,
    bound: Option<f64>,
    pass: bool,
    detail: Option<String>,
}

impl Measured {
    fn at_most(value: f64, bound: f64) -> Self {
        Self {
            value: Some(value),
            bound: Some(bound),
            pass: value <= bound,
            detail: None,
        }
    }

    fn at_least(value: f64, bound: f64) -> Self {
        Self {
            value: Some(value),
            bound: Some(bound),
            pass: value >= bound,
            detail: None,
        }
    }

    fn info(value: f64) -> Self {
        Self {
            value: Some(value),
            bound: None,
            pass: true,
            detail: None,
        }
    }
}

struct Runner<'a> {
    exp: &'a Experiment,
    opts: RunOptions,
    report: Report,
}

impl<'a> Runner<'a> {
    fn new(command: Command, exp: &'a Experiment, opts: RunOptions, kernel_name: &str) -> Self {
        let mut report = Report::default();
        report.push(Record::Config {
            command: command.name().to_string(),
            atoms: exp.space.atoms().to_vec(),
            weights: exp.space.weights().to_vec(),
            kernel: kernel_name.to_string(),
            n_samples: exp.mc.n_samples,
            seed: exp.mc.seed,
            tolerances: exp.tolerances.clone(),
        });
        Self { exp, opts, report }
    }

    fn check(
        &mut self,
        name: impl Into<String>,
        anchor: &str,
        f: impl FnOnce() -> setkernel::Result<Measured>,
    ) -> bool {
        let start = Instant::now();
        let m = f().unwrap_or_else(|e| Measured {
            value: error_value(&e),
            bound: None,
            pass: false,
            detail: Some(e.to_string()),
        });
        let runtime_ms = self
            .opts
            .timings
            .then(|| start.elapsed().as_secs_f64() * 1e3);
        self.report.push(Record::Check(CheckRecord {
            check: name.into(),
            anchor: anchor.to_string(),
            status: Status::from_bool(m.pass),
            value: m.value,
            bound: m.bound,
            detail: m.detail,
            runtime_ms,
        }));
        m.pass
    }

    fn skipped(&mut self, name: impl Into<String>, anchor: &str, why: &str) {
        let why = why.to_string();
        self.check(name, anchor, || {
            Ok(Measured {
                value: None,
                bound: None,
                pass: false,
                detail: Some(why),
            })
        });
    }

    fn kernel(&mut self) -> Option<SetKernel> {
        let built = self.exp.kernel();
        let ok = built.as_ref().map(|_| ()).map_err(Clone::clone);
        self.check("kernel", "kernel/construction", || {
            ok.map(|()| Measured {
                value: None,
                bound: None,
                pass: true,
                detail: None,
            })
        });
        built.ok()
    }

    fn chain_checks(&mut self, chain: &MarkovChain) {
        let tol = self.exp.tolerances.clone();
        let seed = self.exp.mc.seed;
        self.check("reversibility", "markov/detailed-balance", || {
            Ok(Measured::at_most(
                chain.detailed_balance_defect(),
                tol.reversibility,
            ))
        });
        self.check("transience", "markov/transience", || {
            let rho = chain.spectral_bound();
            let bound = 1.0 - setkernel::markov::TRANSIENCE_MARGIN;
            Ok(Measured {
                value: Some(rho),
                bound: Some(bound),
                pass: rho < bound,
                detail: None,
            })
        });
        self.check("contractivity", "markov/contraction", || {
            let rho = chain.spectral_bound();
            Ok(Measured {
                value: Some(rho),
                bound: Some(1.0),
                pass: chain.contractivity_check(seed),
                detail: None,
            })
        });
    }

    fn kernel_checks(&mut self, kernel: Option<&SetKernel>) {
        let tol = self.exp.tolerances.clone();
        let sets = self.exp.probe_sets();
        let Some(kernel) = kernel else {
            for (name, anchor) in [
                ("positive_definite", "kernel/positive-definite"),
                ("schwarz", "kernel/schwarz"),
                ("absolute_continuity", "kernel/absolute-continuity"),
            ] {
                self.skipped(name, anchor, "kernel unavailable");
            }
            return;
        };
        self.check("positive_definite", "kernel/positive-definite", || {
            let g = kernel.gram(&sets)?;
            let trace = g.entries.trace().abs();
            let bound = if trace > 0.0 {
                -tol.positive_definite * trace
            } else {
                -tol.positive_definite
            };
            Ok(Measured::at_least(g.min_eigenvalue(), bound))
        });
        self.check("schwarz", "kernel/schwarz", || {
            let g = kernel.gram(&sets)?.entries;
            let mut worst = f64::NEG_INFINITY;
            for i in 0..g.nrows() {
                for j in 0..g.nrows() {
                    worst = worst.max(g[(i, j)].powi(2) - g[(i, i)] * g[(j, j)]);
                }
            }
            Ok(Measured::at_most(worst.max(0.0), tol.schwarz))
        });
        self.check("absolute_continuity", "kernel/absolute-continuity", || {
            let report =
                check_absolute_continuity(kernel, &self.exp.family, tol.absolute_continuity)?;
            let worst = report
                .violations
                .iter()
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max);
            Ok(Measured {
                value: Some(worst),
                bound: Some(tol.absolute_continuity),
                pass: report.holds(),
                detail: (!report.holds()).then(|| {
                    let sets: Vec<String> = report
                        .violations
                        .iter()
                        .map(|(s, _)| self.exp.set_label(s))
                        .collect();
                    format!("K(N, ·) ≠ 0 on null sets {}", sets.join(" "))
                }),
            })
        });
    }

    /// Realizes the kernel and records the singleton/family residual.
    fn realize(&mut self, kernel: Option<&SetKernel>) -> Option<Factorization> {
        let Some(kernel) = kernel else {
            self.skipped("realize", "factorization/forward", "kernel unavailable");
            return None;
        };
        let tol = self.exp.tolerances.realize;
        let sets = self.exp.probe_sets();
        let mut out = None;
        self.check("realize", "factorization/forward", || {
            let fact = realize(kernel)?;
            let ks = sets
                .iter()
                .map(|a| fact.k(a))
                .collect::<setkernel::Result<Vec<_>>>()?;
            let mut worst = 0.0_f64;
            for (i, a) in sets.iter().enumerate() {
                for (j, b) in sets.iter().enumerate() {
                    let r = (fact.space().inner(&ks[i], &ks[j]) - kernel.eval(a, b)?).abs();
                    worst = worst.max(r);
                }
            }
            out = Some(fact);
            Ok(Measured::at_most(worst, tol))
        });
        out
    }

    fn factorization_checks(&mut self, kernel: &SetKernel, fact: &Factorization) {
        let tol = self.exp.tolerances.clone();
        let sets = self.exp.probe_sets();
        let family = self.exp.family.clone();
        let space = fact.space().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.exp.mc.seed);

        self.check("reverse_direction", "factorization/reverse", || match fact
            .reverse_direction(&family)
        {
            Ok(r) => Ok(Measured::at_most(r.max_residual, tol.density)),
            Err(setkernel::Error::Inconsistent { residual, .. }) => {
                Ok(Measured::at_most(residual, tol.density))
            }
            Err(e) => Err(e),
        });

        let elements: Vec<RkhsElement> = (0..ISOMETRY_PROBES)
            .map(|_| {
                let terms = rng.random_range(1..=4);
                RkhsElement::new(
                    (0..terms)
                        .map(|_| {
                            let a = sets[rng.random_range(0..sets.len())].clone();
                            (rng.random_range(-1.0..1.0), a)
                        })
                        .collect(),
                )
            })
            .collect();
        self.check("isometry", "factorization/isometry", || {
            let mut worst = 0.0_f64;
            for f in &elements {
                let h = f.norm_sq(kernel)?;
                let l2 = space.norm_sq(&fact.isometry_b(f)?);
                worst = worst.max((l2 - h).abs() / h.max(1.0));
            }
            Ok(Measured::at_most(worst, tol.isometry))
        });

        let n = space.len();
        let probes: Vec<DVector<f64>> = (0..ADJOINT_PROBES)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        self.check("adjoint", "factorization/adjoint", || {
            let mut worst = 0.0_f64;
            for (phi, f) in probes.iter().zip(&elements) {
                let lhs = space.inner(&fact.isometry_b(f)?, phi);
                let rhs = f.inner(&fact.coisometry_element(phi)?, kernel)?;
                worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
            }
            Ok(Measured::at_most(worst, tol.adjoint))
        });

        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
            .qr()
            .q();
        self.check("onb", "factorization/parseval", || {
            let e1 = singleton_onb(&space);
            let positive = space.positive_atoms();
            // rotate within the positive-weight coordinates only
            let mut rot = DMatrix::identity(n, n);
            for (i, &x) in positive.iter().enumerate() {
                for (j, &y) in positive.iter().enumerate() {
                    rot[(x, y)] = q[(i, j)];
                }
            }
            let e2 = onb_from_orthogonal(&space, &rot)?;
            let mut worst = 0.0_f64;
            for a in &sets {
                for b in &sets {
                    let k = kernel.eval(a, b)?;
                    let s1 = fact.onb_factorization(&e1, a, b)?;
                    let s2 = fact.onb_factorization(&e2, a, b)?;
                    worst = worst.max((s1 - k).abs()).max((s2 - k).abs());
                }
            }
            Ok(Measured::at_most(worst, tol.onb))
        });

        self.check("b_range_dimension", "factorization/range", || {
            Ok(Measured::info(fact.b_range_dimension(&family)? as f64))
        });
    }

    fn green_checks(&mut self, chain: &MarkovChain, kernel: Option<&SetKernel>) {
        let tol = self.exp.tolerances.clone();
        let data = chain.green();
        let data_ref = data.as_ref().map_err(Clone::clone);
        self.check("green_identity", "markov/green-identity", || {
            data_ref
                .clone()
                .map(|d| Measured::at_most(d.identity_residual, tol.green_identity))
        });
        self.check("green_series", "markov/green-series", || {
            data_ref
                .clone()
                .map(|d| Measured::at_most(d.series_deviation, tol.green_series))
        });
        self.check("laplacian_gap", "markov/spectral-gap", || {
            Ok(Measured::at_least(
                chain.laplacian_gap()?,
                tol.laplacian_gap,
            ))
        });
        let sets = if chain.space().len() <= EXHAUSTIVE_ATOMS {
            chain.space().all_subsets()
        } else {
            self.exp.probe_sets()
        };
        match kernel {
            Some(kernel) => {
                self.check("green_factor", "markov/green-factorization", || {
                    let space = chain.space();
                    let ks = sets
                        .iter()
                        .map(|a| k_from_green(chain, a))
                        .collect::<setkernel::Result<Vec<_>>>()?;
                    let mut worst = 0.0_f64;
                    for (i, a) in sets.iter().enumerate() {
                        for (j, b) in sets.iter().enumerate() {
                            let r = (space.inner(&ks[i], &ks[j]) - kernel.eval(a, b)?).abs();
                            worst = worst.max(r);
                        }
                    }
                    Ok(Measured::at_most(worst, tol.green_factor))
                });
                self.check("green_density", "markov/green-density", || {
                    let g = &data_ref.clone()?.g;
                    Ok(Measured::at_most(
                        max_abs_diff(&build_t(kernel)?, g),
                        tol.green_factor,
                    ))
                });
            }
            None => {
                self.skipped(
                    "green_factor",
                    "markov/green-factorization",
                    "kernel unavailable",
                );
                self.skipped(
                    "green_density",
                    "markov/green-density",
                    "kernel unavailable",
                );
            }
        }
        if let Ok(d) = data {
            let n = d.g.nrows();
            self.report.push(Record::Green {
                g: (0..n)
                    .map(|i| d.g.row(i).iter().copied().collect())
                    .collect(),
                spectral_bound: d.spectral_bound,
                series_terms: d.series_terms,
            });
        }
    }

    fn monte_carlo(&mut self, kernel: &SetKernel, fact: &Factorization) -> Result<()> {
        let integrands = self.exp.integrands_or_default();
        let mut pairs: Vec<(String, SimpleFunction, SimpleFunction)> = integrands
            .iter()
            .map(|i| {
                (
                    format!("ito_isometry:{}", i.name),
                    i.function.clone(),
                    i.function.clone(),
                )
            })
            .collect();
        for &(l, r) in &self.exp.cross {
            let (a, b) = (&self.exp.integrands[l], &self.exp.integrands[r]);
            pairs.push((
                format!("cross_moment:{}|{}", a.name, b.name),
                a.function.clone(),
                b.function.clone(),
            ));
        }
        if pairs.is_empty() {
            return Ok(());
        }
        let mut family: Vec<MeasurableSet> = Vec::new();
        for (_, f, g) in &pairs {
            for s in f.sets().chain(g.sets()) {
                if !family.contains(s) {
                    family.push(s.clone());
                }
            }
        }
        let mc = self.exp.mc;
        let sampler = build_sampler(kernel, &family, mc.seed)?;
        let fg: Vec<(SimpleFunction, SimpleFunction)> = pairs
            .iter()
            .map(|(_, f, g)| (f.clone(), g.clone()))
            .collect();
        let results = sampler.cross_moments(fact, &fg, mc.n_samples)?;
        for ((quantity, _, _), r) in pairs.into_iter().zip(results) {
            self.report.push(Record::Mc(McRecord {
                quantity,
                estimate: r.estimate,
                std_error: r.std_error,
                exact: r.exact,
                n: r.n_samples,
                seed: mc.seed,
                pass: r.within(self.exp.tolerances.sigmas),
            }));
        }
        Ok(())
    }

    fn sweeps(&mut self, kernel: &SetKernel, fact: &Factorization) {
        let tol = self.exp.tolerances.clone();
        let chain = self.exp.partition_chain_or_default();
        let finest_is_singletons = chain
            .levels()
            .last()
            .is_some_and(|p| p.blocks().len() == self.exp.space.len());
        for integrand in self.exp.integrands_or_default() {
            let phi = &integrand.function;
            let values = match refinement_sweep(kernel, fact, phi, &chain) {
                Ok(v) => v,
                Err(e) => {
                    let why = e.to_string();
                    self.skipped(
                        format!("monotonicity:{}", integrand.name),
                        "field/monotone",
                        &why,
                    );
                    self.skipped(
                        format!("sweep_bound:{}", integrand.name),
                        "field/bound",
                        &why,
                    );
                    continue;
                }
            };
            self.report.push(Record::Sweep {
                integrand: integrand.name.clone(),
                values: values.clone(),
            });
            self.check(
                format!("monotonicity:{}", integrand.name),
                "field/monotone",
                || {
                    let drop = values.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
                    Ok(Measured::at_most(drop, tol.monotone))
                },
            );
            let total = fact.s_norm_sq(phi);
            let last = values.last().copied().unwrap_or(0.0);
            let total_ref = total.as_ref().map_err(Clone::clone).copied();
            self.check(
                format!("sweep_bound:{}", integrand.name),
                "field/bound",
                || Ok(Measured::at_most(last - total_ref?, tol.supremum)),
            );
            if finest_is_singletons {
                self.check(
                    format!("supremum:{}", integrand.name),
                    "field/supremum",
                    || Ok(Measured::at_most((last - total?).abs(), tol.supremum)),
                );
            }
        }
    }
}

fn error_value(e: &setkernel::Error) -> Option<f64> {
    match e {
        setkernel::Error::NotTransient { spectral_bound } => Some(*spectral_bound),
        setkernel::Error::VerificationFailed { residual, .. }
        | setkernel::Error::Inconsistent { residual, .. } => Some(*residual),
        setkernel::Error::NotPositive { min_eigenvalue, .. } => Some(*min_eigenvalue),
        _ => None,
    }
}

fn kernel_label(exp: &Experiment) -> &'static str {
    match exp.kernel_type {
        KernelType::Wiener => "wiener",
        KernelType::RankOne => "rank_one",
        KernelType::Counting => "counting",
        KernelType::Operator => "operator",
        KernelType::Markov => "markov",
    }
}

/// Runs `command` on a resolved experiment.
pub fn run(command: Command, exp: &Experiment, opts: RunOptions) -> Result<Outcome> {
    let mut r = Runner::new(command, exp, opts, kernel_label(exp));
    let mut export = None;
    match command {
        Command::Validate => {
            if let Some(chain) = &exp.chain {
                r.chain_checks(chain);
            }
            let kernel = r.kernel();
            r.kernel_checks(kernel.as_ref());
        }
        Command::Factorize => {
            let kernel = r.kernel();
            let fact = r.realize(kernel.as_ref());
            match (&kernel, &fact) {
                (Some(k), Some(f)) => {
                    r.factorization_checks(k, f);
                    export = Some(f.export(&exp.probe_sets())?);
                }
                _ => {
                    for (name, anchor) in [
                        ("reverse_direction", "factorization/reverse"),
                        ("isometry", "factorization/isometry"),
                        ("adjoint", "factorization/adjoint"),
                        ("onb", "factorization/parseval"),
                        ("b_range_dimension", "factorization/range"),
                    ] {
                        r.skipped(name, anchor, "no factorization");
                    }
                }
            }
            if exp.kernel_type == KernelType::Markov {
                let chain = exp.chain.as_ref().expect("markov kernel has a chain");
                r.green_checks(chain, kernel.as_ref());
            }
        }
        Command::MarkovGreen => {
            let chain = exp
                .chain
                .as_ref()
                .ok_or_else(|| CliError::Config("markov-green needs a [chain] table".into()))?;
            r.chain_checks(chain);
            let kernel = setkernel::markov::green_kernel(chain).ok();
            r.green_checks(chain, kernel.as_ref());
        }
        Command::Simulate | Command::RefineSweep => {
            let kernel = r.kernel();
            let fact = r.realize(kernel.as_ref());
            if let (Some(k), Some(f)) = (&kernel, &fact) {
                if command == Command::Simulate {
                    r.monte_carlo(k, f)?;
                }
                r.sweeps(k, f);
            }
        }
    }
    Ok(Outcome {
        report: r.report,
        export,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(src: &str) -> Experiment {
        Experiment::parse(src).unwrap()
    }

    const TWO_STATE: &str = r#"
[space]
atoms = ["0", "1"]
weights = [1.0, 1.0]

[chain]
matrix = [[0.0, 0.5], [0.5, 0.0]]

[kernel]
type = "markov"

[[integrand]]
name = "one"
terms = [{ coefficient = 1.0, set = ["1"] }]

[mc]
n_samples = 20000
seed = 3
"#;

    #[test]
    fn markov_green_reports_hand_computed_g() {
        let out = run(Command::MarkovGreen, &exp(TWO_STATE), RunOptions::default()).unwrap();
        assert!(out.report.passed(), "{}", out.report.to_jsonl());
        let g = out
            .report
            .records
            .iter()
            .find_map(|r| match r {
                Record::Green { g, .. } => Some(g.clone()),
                _ => None,
            })
            .unwrap();
        assert!((g[0][0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((g[0][1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn factorize_exports_green_t() {
        let out = run(Command::Factorize, &exp(TWO_STATE), RunOptions::default()).unwrap();
        assert!(out.report.passed(), "{}", out.report.to_jsonl());
        let t = out.export.unwrap().t;
        assert!((t[1][1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((t[1][0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stochastic_chain_fails_transience() {
        let src = TWO_STATE.replace("[[0.0, 0.5], [0.5, 0.0]]", "[[0.0, 1.0], [1.0, 0.0]]");
        let out = run(Command::Validate, &exp(&src), RunOptions::default()).unwrap();
        let t = out.report.check("transience").unwrap();
        assert_eq!(t.status, Status::Fail);
        let k = out.report.check("kernel").unwrap();
        assert!(k.detail.as_deref().unwrap().contains("transient"));
    }

    #[test]
    fn every_check_appears_once() {
        let out = run(Command::Factorize, &exp(TWO_STATE), RunOptions::default()).unwrap();
        let mut names: Vec<&str> = out.report.checks().map(|c| c.check.as_str()).collect();
        let len = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), len);
    }

    #[test]
    fn timings_only_when_asked() {
        let e = exp(TWO_STATE);
        let plain = run(Command::Validate, &e, RunOptions::default()).unwrap();
        assert!(plain.report.checks().all(|c| c.runtime_ms.is_none()));
        let timed = run(Command::Validate, &e, RunOptions { timings: true }).unwrap();
        assert!(timed.report.checks().all(|c| c.runtime_ms.is_some()));
    }
}
