//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setkernel::factorization::{onb_from_orthogonal, realize, singleton_onb};
use setkernel::field::{build_sampler, refinement_sweep};
use setkernel::markov::{green_kernel, k_from_green};
use setkernel::{
    random, Error, Factorization, MarkovChain, MeasurableSet, MeasureSpace, RkhsElement, SetKernel,
    SimpleFunction,
};
use setkernel_cli::{run, Command as Cmd, Experiment, RunOptions};

struct Verdict {
    pass: bool,
    summary: String,
}

fn verdict(pass: bool, summary: String) -> Verdict {
    Verdict { pass, summary }
}

/// `Σ_{x∈A, y∈B} ν(x) M[x, y]` straight from the definition.
fn double_sum(w: &[f64], m: &DMatrix<f64>, a: &MeasurableSet, b: &MeasurableSet) -> f64 {
    let mut s = 0.0;
    for x in a.iter() {
        for y in b.iter() {
            s += w[x] * m[(x, y)];
        }
    }
    s
}

fn weighted_inner(w: &[f64], f: &DVector<f64>, g: &DVector<f64>) -> f64 {
    (0..w.len()).map(|x| w[x] * f[x] * g[x]).sum()
}

/// Realizes 100 random operator kernels on six atoms; also returns them for
/// the reverse-direction criterion.
fn criterion_1(accepted: &mut Vec<Factorization>) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = 0.0_f64;
    let mut realized = 0;
    for _ in 0..100 {
        let space = random::space(&mut rng, 6, 0.1, 3.0);
        let rank = rng.random_range(1..=6);
        let m = random::nu_psd_matrix(&mut rng, &space, rank);
        let kernel = SetKernel::operator(&space, m.clone()).expect("ν-PSD by construction");
        let Ok(fact) = realize(&kernel) else { continue };
        realized += 1;
        let subsets = space.all_subsets();
        let ks: Vec<DVector<f64>> = subsets.iter().map(|a| fact.k(a).unwrap()).collect();
        for (i, a) in subsets.iter().enumerate() {
            for (j, b) in subsets.iter().enumerate() {
                let lhs = weighted_inner(space.weights(), &ks[i], &ks[j]);
                worst = worst.max((lhs - double_sum(space.weights(), &m, a, b)).abs());
            }
        }
        accepted.push(fact);
    }
    let elapsed = start.elapsed();
    verdict(
        realized == 100 && worst <= 1e-8 && elapsed <= Duration::from_secs(60),
        format!(
            "forward realization: {realized}/100 realized, max |<k_A,k_B> - K(A,B)| = {worst:.2e} (<= 1e-8) over 64x64 pairs, {:.2}s (<= 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2(accepted: &[Factorization]) -> Verdict {
    let mut worst = 0.0_f64;
    let mut failures = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut facts: Vec<Factorization> = accepted.to_vec();
    for _ in 0..20 {
        // include null atoms
        let mut w: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..=3.0)).collect();
        w[rng.random_range(0..6)] = 0.0;
        let space = MeasureSpace::from_weights(w).unwrap();
        facts.push(realize(&SetKernel::wiener(&space)).unwrap());
        facts.push(realize(&SetKernel::rank_one(&space)).unwrap());
        facts.push(realize(&random::operator_kernel(&mut rng, &space, 4).unwrap()).unwrap());
        let chain = random::conductance_chain(&mut rng, 6, 0.05).unwrap();
        facts.push(realize(&green_kernel(&chain).unwrap()).unwrap());
    }
    for fact in &facts {
        match fact.reverse_direction(&fact.space().all_subsets()) {
            Ok(r) if r.absolutely_continuous => worst = worst.max(r.max_residual),
            Ok(_) => failures += 1,
            Err(Error::Inconsistent { residual, .. }) => {
                failures += 1;
                worst = worst.max(residual);
            }
            Err(_) => failures += 1,
        }
    }
    let space = MeasureSpace::new(
        vec!["x".into(), "y".into(), "z".into()],
        vec![1.0, 2.0, 0.0],
    )
    .unwrap();
    let rejection = match realize(&SetKernel::counting(&space)) {
        Err(Error::NoDensity { violations }) if violations > 0 => {
            format!("rejected with {violations} absolute-continuity violation(s)")
        }
        other => {
            failures += 1;
            format!("NOT rejected: {other:?}")
        }
    };
    verdict(
        failures == 0 && worst <= 1e-9,
        format!(
            "reverse direction: max density residual {worst:.2e} (<= 1e-9) over {} kernels; counting kernel with null atom {rejection}",
            facts.len()
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let mut facts = Vec::new();
    for n in [3, 5, 6, 8] {
        let space = random::space(&mut rng, n, 0.1, 3.0);
        facts.push(realize(&SetKernel::wiener(&space)).unwrap());
        facts.push(realize(&SetKernel::rank_one(&space)).unwrap());
        let rank = rng.random_range(1..=n);
        facts.push(realize(&random::operator_kernel(&mut rng, &space, rank).unwrap()).unwrap());
        let chain = random::conductance_chain(&mut rng, n, 0.05).unwrap();
        facts.push(realize(&green_kernel(&chain).unwrap()).unwrap());
    }

    let mut isometry = 0.0_f64;
    let mut adjoint = 0.0_f64;
    for i in 0..1000 {
        let fact = &facts[i % facts.len()];
        let space = fact.space();
        let n = space.len();
        let terms = rng.random_range(1..=5);
        let f = RkhsElement::new(
            (0..terms)
                .map(|_| {
                    (
                        rng.random_range(-2.0..2.0),
                        random::nonempty_set(&mut rng, n),
                    )
                })
                .collect(),
        );
        let h = f.norm_sq(fact.kernel()).unwrap();
        let bf = fact.isometry_b(&f).unwrap();
        isometry = isometry.max((space.norm_sq(&bf) - h).abs() / h);
        let phi = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let lhs = space.inner(&bf, &phi);
        let rhs = f
            .inner(&fact.coisometry_element(&phi).unwrap(), fact.kernel())
            .unwrap();
        adjoint = adjoint.max((lhs - rhs).abs());
    }

    let mut onb = 0.0_f64;
    for fact in &facts {
        let space = fact.space();
        let n = space.len();
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
            .qr()
            .q();
        let e1 = singleton_onb(space);
        let e2 = onb_from_orthogonal(space, &q).unwrap();
        for _ in 0..20 {
            let a = random::nonempty_set(&mut rng, n);
            let b = random::nonempty_set(&mut rng, n);
            let k = fact.kernel().eval(&a, &b).unwrap();
            for e in [&e1, &e2] {
                onb = onb.max((fact.onb_factorization(e, &a, &b).unwrap() - k).abs());
            }
        }
    }

    let space = random::space(&mut rng, 6, 0.1, 3.0);
    let rank_one = realize(&SetKernel::rank_one(&space)).unwrap();
    let dim = rank_one.b_range_dimension(&space.all_subsets()).unwrap();

    verdict(
        isometry <= 1e-9 && adjoint <= 1e-9 && onb <= 1e-9 && dim == 1,
        format!(
            "isometry/co-isometry: isometry defect {isometry:.2e} (<= 1e-9, 1000 elements), adjoint residual {adjoint:.2e} (<= 1e-9), ONB sum error {onb:.2e} (<= 1e-9, 2 bases), rank_one range dim {dim} (== 1)"
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut identity = 0.0_f64;
    let mut series = 0.0_f64;
    let mut factor = 0.0_f64;
    let mut exhaustive = 0;
    let mut failures = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=16);
        let chain = random::conductance_chain(&mut rng, n, 0.05).unwrap();
        let Ok(data) = chain.green() else {
            failures += 1;
            continue;
        };
        let id = DMatrix::<f64>::identity(n, n);
        let direct = ((&id - chain.p()) * &data.g - &id).abs().max();
        identity = identity.max(direct);
        series = series.max(data.series_deviation);
        let Ok(kernel) = green_kernel(&chain) else {
            failures += 1;
            continue;
        };
        let sets = if n <= 6 {
            exhaustive += 1;
            chain.space().all_subsets()
        } else {
            let mut s = chain.space().singletons();
            s.extend((0..40).map(|_| random::nonempty_set(&mut rng, n)));
            s
        };
        let ks: Vec<DVector<f64>> = sets
            .iter()
            .map(|a| k_from_green(&chain, a).unwrap())
            .collect();
        let w = chain.space().weights();
        for (i, a) in sets.iter().enumerate() {
            for (j, b) in sets.iter().enumerate() {
                let r = (weighted_inner(w, &ks[i], &ks[j]) - kernel.eval(a, b).unwrap()).abs();
                factor = factor.max(r);
            }
        }
    }

    // I - P = [[1, -1/2], [-1/2, 1]] has inverse [[4/3, 2/3], [2/3, 4/3]]
    let two = MeasureSpace::uniform(2).unwrap();
    let chain =
        MarkovChain::new(&two, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])).unwrap();
    let one = MeasurableSet::singleton(1);
    let k11 = green_kernel(&chain).unwrap().eval(&one, &one).unwrap();
    let oracle = (k11 - 4.0 / 3.0).abs();

    verdict(
        failures == 0 && identity <= 1e-9 && series <= 1e-8 && factor <= 1e-8 && oracle <= 1e-12,
        format!(
            "Green kernels: 100 chains ({exhaustive} exhaustive), |(I-P)G - I| = {identity:.2e} (<= 1e-9), series/solve {series:.2e} (<= 1e-8), <k_A,k_B> vs K {factor:.2e} (<= 1e-8), two-state K({{1}},{{1}}) - 4/3 = {oracle:.1e} (<= 1e-12)"
        ),
    )
}

fn criterion_5() -> Verdict {
    const N: usize = 200_000;
    const CASES: usize = 50;
    let start = Instant::now();
    let mut worst_fraction = 1.0_f64;
    let mut worst_at = String::new();
    let mut total_in = 0;
    let mut total = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let space = random::space(&mut rng, 6, 0.1, 3.0);
        let chain = random::conductance_chain(&mut rng, 6, 0.05).unwrap();
        let kernels = [
            SetKernel::wiener(&space),
            SetKernel::rank_one(&space),
            green_kernel(&chain).unwrap(),
        ];
        for kernel in &kernels {
            let n = kernel.space().len();
            let fact = realize(kernel).unwrap();
            let mut pairs: Vec<(SimpleFunction, SimpleFunction)> = Vec::new();
            for _ in 0..CASES {
                let phi = random::simple_function(&mut rng, n, 4);
                pairs.push((phi.clone(), phi));
            }
            for _ in 0..CASES {
                let phi = random::simple_function(&mut rng, n, 4);
                let psi = random::simple_function(&mut rng, n, 4);
                pairs.push((phi, psi));
            }
            let mut family: Vec<MeasurableSet> = Vec::new();
            for (f, g) in &pairs {
                for s in f.sets().chain(g.sets()) {
                    if !family.contains(s) {
                        family.push(s.clone());
                    }
                }
            }
            let sampler = build_sampler(kernel, &family, seed).unwrap();
            let results = sampler.cross_moments(&fact, &pairs, N).unwrap();
            for (kind, chunk) in ["isometry", "cross"].iter().zip(results.chunks(CASES)) {
                let inside = chunk.iter().filter(|r| r.within(5.0)).count();
                total_in += inside;
                total += chunk.len();
                let fraction = inside as f64 / chunk.len() as f64;
                if fraction < worst_fraction {
                    worst_fraction = fraction;
                    worst_at = format!(" (seed {seed}, {}, {kind})", kernel.name());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst_fraction >= 0.95 && elapsed <= Duration::from_secs(300),
        format!(
            "Ito isometry and cross moments: worst per-seed coverage {:.0}%{worst_at} (>= 95%), overall {total_in}/{total} within 5 SE at n = {N}, 20 seeds x 3 kernels x {CASES}+{CASES} cases, {:.1}s (<= 300s)",
            worst_fraction * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    let mut drop = 0.0_f64;
    let mut terminal = 0.0_f64;
    let mut shortest = usize::MAX;
    for i in 0..50 {
        let space = random::space(&mut rng, 8, 0.1, 3.0);
        let kernel = match i % 4 {
            0 => SetKernel::wiener(&space),
            1 => SetKernel::rank_one(&space),
            2 => {
                let rank = rng.random_range(1..=8);
                random::operator_kernel(&mut rng, &space, rank).unwrap()
            }
            _ => green_kernel(&random::conductance_chain(&mut rng, 8, 0.05).unwrap()).unwrap(),
        };
        let space = kernel.space().clone();
        let fact = realize(&kernel).unwrap();
        let chain = random::refinement_chain(&mut rng, &space);
        shortest = shortest.min(chain.len());
        let phi = random::simple_function(&mut rng, 8, 5);
        let qs = refinement_sweep(&kernel, &fact, &phi, &chain).unwrap();
        for w in qs.windows(2) {
            drop = drop.max(w[0] - w[1]);
        }
        let total = fact.s_norm_sq(&phi).unwrap();
        terminal = terminal.max((qs.last().unwrap() - total).abs());
    }
    verdict(
        shortest >= 3 && drop <= 1e-10 && terminal <= 1e-9,
        format!(
            "refinement monotonicity: 50 chains (min length {shortest}), largest decrease {:.2e} (<= 1e-10), |Q_singletons - |S phi|^2| = {terminal:.2e} (<= 1e-9)",
            drop.max(0.0)
        ),
    )
}

fn criterion_7() -> Verdict {
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/graph.toml");
    let cfg = cfg.to_str().unwrap();
    let binary = |workers: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_setkernel"))
            .args([
                "simulate",
                "--config",
                cfg,
                "--seed",
                "42",
                "--workers",
                workers,
            ])
            .env_remove("SETKERNEL_OUT_DIR")
            .output()
            .expect("binary runs");
        out.stdout
    };
    let runs = [
        binary("1"),
        binary("1"),
        binary("4"),
        binary("4"),
        binary("2"),
    ];
    let cli_same = !runs[0].is_empty() && runs.iter().all(|r| *r == runs[0]);

    let mut exp = Experiment::load(std::path::Path::new(cfg)).unwrap();
    exp.mc.seed = 42;
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(Cmd::Simulate, &exp, RunOptions::default()).unwrap())
            .report
            .to_jsonl()
    };
    let lib = [in_pool(1), in_pool(3), in_pool(8)];
    let lib_same = lib.iter().all(|r| *r == lib[0]) && lib[0].as_bytes() == runs[0].as_slice();

    verdict(
        cli_same && lib_same,
        format!(
            "determinism: simulate report ({} bytes) identical across 5 CLI runs with 1/2/4 workers and 3 in-process pools: {}",
            runs[0].len(),
            cli_same && lib_same
        ),
    )
}

fn main() -> ExitCode {
    let mut accepted = Vec::new();
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut guarded = |n: usize, f: &mut dyn FnMut() -> Verdict| {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n} [{}] {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.summary
        );
        results.push((n, v));
    };
    guarded(1, &mut || criterion_1(&mut accepted));
    guarded(2, &mut || criterion_2(&accepted));
    guarded(3, &mut criterion_3);
    guarded(4, &mut criterion_4);
    guarded(5, &mut criterion_5);
    guarded(6, &mut criterion_6);
    guarded(7, &mut criterion_7);
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, v)| !v.pass)
        .map(|(n, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
