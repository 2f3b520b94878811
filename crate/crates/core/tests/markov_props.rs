mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setkernel::factorization::{build_t, realize};
use setkernel::linalg::max_abs_diff;
use setkernel::markov::{green_kernel, k_from_green};
use setkernel::{random, Error, MarkovChain, MeasureSpace};

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[test]
fn green_function_of_random_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..60 {
        let n = rng.random_range(1..=32);
        let chain = random::conductance_chain(&mut rng, n, 0.05).unwrap();
        let data = chain.green().unwrap();
        let p = chain.p();
        let id = DMatrix::<f64>::identity(n, n);
        assert!(max_abs_diff(&((&id - p) * &data.g), &id) <= 1e-9);
        assert!(data.identity_residual <= 1e-9);
        assert!(data.series_deviation <= 1e-8);

        let oracle = common::gauss_jordan_inverse(&rows(&(&id - p)));
        for (x, row) in oracle.iter().enumerate() {
            for (y, v) in row.iter().enumerate() {
                assert!((data.g[(x, y)] - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
        assert!(chain.laplacian_gap().unwrap() >= 1e-10);
        assert!(chain.contractivity_check(n as u64));
    }
}

#[test]
fn green_kernel_factorizes_through_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..30 {
        let n = rng.random_range(1..=6);
        let chain = random::conductance_chain(&mut rng, n, 0.05).unwrap();
        let kernel = green_kernel(&chain).unwrap();
        let space = chain.space();
        let subsets = space.all_subsets();
        let ks: Vec<Vec<f64>> = subsets
            .iter()
            .map(|a| k_from_green(&chain, a).unwrap().iter().copied().collect())
            .collect();
        for (i, a) in subsets.iter().enumerate() {
            for (j, b) in subsets.iter().enumerate() {
                let lhs = common::weighted_inner(space.weights(), &ks[i], &ks[j]);
                let rhs = kernel.eval(a, b).unwrap();
                assert!((lhs - rhs).abs() <= 1e-8, "{a} {b}: {lhs} vs {rhs}");
            }
        }
        let g = chain.green().unwrap().g;
        assert!(max_abs_diff(&build_t(&kernel).unwrap(), &g) <= 1e-8);
        realize(&kernel).unwrap();
    }
}

#[test]
fn two_state_oracle() {
    // I - P = [[1, -1/2], [-1/2, 1]], inverse (4/3)[[1, 1/2], [1/2, 1]]
    let space = MeasureSpace::uniform(2).unwrap();
    let chain =
        MarkovChain::new(&space, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])).unwrap();
    let g = chain.green().unwrap().g;
    let expected = [[4.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 4.0 / 3.0]];
    for x in 0..2 {
        for y in 0..2 {
            assert!((g[(x, y)] - expected[x][y]).abs() <= 1e-12);
        }
    }
    let k = green_kernel(&chain).unwrap();
    let a = setkernel::MeasurableSet::singleton(1);
    assert!((k.eval(&a, &a).unwrap() - 4.0 / 3.0).abs() <= 1e-12);
}

#[test]
fn stochastic_chain_is_not_transient() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..10 {
        let n = rng.random_range(2..=10);
        // no killing anywhere: P is stochastic and reversible, ρ = 1
        let edges: Vec<(usize, usize, f64)> = (1..n)
            .map(|x| (x, x - 1, rng.random_range(0.1..1.0)))
            .collect();
        let atoms = (0..n).map(|i| format!("s{i}")).collect();
        let chain = MarkovChain::from_conductances(atoms, &edges, &vec![0.0; n]).unwrap();
        assert!(matches!(chain.green(), Err(Error::NotTransient { .. })));
        assert!(green_kernel(&chain).is_err());
    }
}
