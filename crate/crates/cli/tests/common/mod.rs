//! Shared helpers for the acceptance suite: random problem instances and a
//! dense direct-solve oracle kept independent of the sparse solver under test.

use bnf_core::affinity::AffinityGraph;
use bnf_core::maps::UnaryField;
use bnf_core::tensor::Tensor3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Connected random graph: a ring guarantees positive degrees, plus roughly
/// 2n extra random edges. Weights are in [0.1, 1].
pub fn random_graph(n: usize, seed: u64) -> AffinityGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut present = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = (i.min(j), i.max(j));
        if present.insert((a, b)) {
            edges.push((a, b, rng.gen_range(0.1..1.0)));
        }
    }
    for _ in 0..2 * n {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let (a, b) = (i.min(j), i.max(j));
        if present.insert((a, b)) {
            edges.push((a, b, rng.gen_range(0.1..1.0)));
        }
    }
    AffinityGraph::from_edges(n, edges).expect("generated edges are valid")
}

/// Random strictly positive probability field over `n` pixels and `k` classes.
pub fn random_unary(n: usize, k: usize, seed: u64) -> UnaryField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n * k];
    for c in 0..k {
        for p in 0..n {
            data[c * n + p] = rng.gen_range(0.05..1.0);
        }
    }
    UnaryField::from_scores(Tensor3::new(1, n, k, data).unwrap()).unwrap()
}

/// Dense `A = D - alpha * W` of a graph.
pub fn dense_system(g: &AffinityGraph, alpha: f64) -> Vec<Vec<f64>> {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for (i, d) in g.degrees().iter().enumerate() {
        a[i][i] = *d;
    }
    for &(i, j, w) in g.edges() {
        a[i as usize][j as usize] -= alpha * w;
        a[j as usize][i as usize] -= alpha * w;
    }
    a
}

/// In-place Cholesky factorization A = L L^T. Returns the lower factor, or
/// `None` if a pivot is not strictly positive (A not positive definite).
pub fn cholesky(mut a: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    for k in 0..n {
        let mut pivot = a[k][k];
        for m in 0..k {
            pivot -= a[k][m] * a[k][m];
        }
        if pivot <= 0.0 {
            return None;
        }
        let pivot = pivot.sqrt();
        a[k][k] = pivot;
        for i in (k + 1)..n {
            let mut v = a[i][k];
            for m in 0..k {
                v -= a[i][m] * a[k][m];
            }
            a[i][k] = v / pivot;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[i][j] = 0.0;
        }
    }
    Some(a)
}

/// Solves `A x = b` by Cholesky factorization plus two triangular solves.
pub fn dense_solve(a: Vec<Vec<f64>>, b: &[f64]) -> Vec<f64> {
    let l = cholesky(a).expect("system matrix must be positive definite");
    let n = b.len();
    // L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for j in 0..i {
            v -= l[i][j] * y[j];
        }
        y[i] = v / l[i][i];
    }
    // L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for j in (i + 1)..n {
            v -= l[j][i] * x[j];
        }
        x[i] = v / l[i][i];
    }
    x
}
