//! Independent reference computations, written from the definitions with
//! plain loops over `Vec`s.

#![allow(dead_code)]

use setkernel::MeasurableSet;

/// `Σ_{x∈A, y∈B} ν(x) M[x, y]`.
pub fn operator_double_sum(w: &[f64], m: &[Vec<f64>], a: &MeasurableSet, b: &MeasurableSet) -> f64 {
    let mut s = 0.0;
    for x in a.iter() {
        for y in b.iter() {
            s += w[x] * m[x][y];
        }
    }
    s
}

pub fn weighted_inner(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Squared length of the projection of `target` onto `span(vectors)` in the
/// inner product `ip`, by modified Gram-Schmidt.
pub fn gram_schmidt_projection_sq(
    vectors: &[Vec<f64>],
    target: &[f64],
    ip: impl Fn(&[f64], &[f64]) -> f64,
) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let scale = vectors.iter().map(|v| ip(v, v)).fold(0.0, f64::max);
    for v in vectors {
        let mut u = v.clone();
        for _ in 0..2 {
            for e in &basis {
                let c = ip(&u, e);
                for (ui, ei) in u.iter_mut().zip(e) {
                    *ui -= c * ei;
                }
            }
        }
        let norm = ip(&u, &u);
        if norm > 1e-20 * scale.max(1e-300) {
            let inv = 1.0 / norm.sqrt();
            basis.push(u.into_iter().map(|x| x * inv).collect());
        }
    }
    basis.iter().map(|e| ip(target, e).powi(2)).sum()
}

/// All set partitions of `{0, …, n-1}` as block lists.
pub fn all_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new()];
    for x in 0..n {
        let mut next = Vec::new();
        for p in out {
            for b in 0..p.len() {
                let mut q: Vec<Vec<usize>> = p.clone();
                q[b].push(x);
                next.push(q);
            }
            let mut q = p.clone();
            q.push(vec![x]);
            next.push(q);
        }
        out = next;
    }
    out
}

/// `fine` refines `coarse` iff every fine block lies inside one coarse block.
pub fn refines(coarse: &[Vec<usize>], fine: &[Vec<usize>]) -> bool {
    fine.iter()
        .all(|f| coarse.iter().any(|c| f.iter().all(|x| c.contains(x))))
}
