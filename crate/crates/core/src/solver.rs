//! Global inference: minimize
//!
//! ```text
//! E(z) = (mu/2) * sum_i d_i (z_i - f_i/d_i)^2  +  (1/2) * sum_{i<j} w_ij (z_i - z_j)^2
//! ```
//!
//! per class. The energy is convex with gradient `mu*D*z - mu*f + (D - W)*z`,
//! so the minimizer solves the SPD system `(D - alpha*W) z = beta*f` with
//! `alpha = 1/(1+mu)`, `beta = mu/(1+mu)`. The K class systems share the same
//! matrix and are solved independently with Jacobi-preconditioned conjugate
//! gradient; the discrete labeling is the per-pixel argmax over the K
//! continuous solutions. An ICM coordinate-descent baseline on the discrete
//! Potts energy is provided for comparison.

use rayon::prelude::*;

use crate::affinity::AffinityGraph;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, UnaryField};
use crate::tensor::Tensor3;

/// Default unary/pairwise balance.
pub const DEFAULT_MU: f64 = 0.025;
/// Default PCG relative-residual tolerance.
pub const DEFAULT_PCG_TOL: f64 = 1e-8;
/// Probabilities are floored at this value inside ICM's -log unary.
const ICM_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// Energy balance parameter; alpha and beta are derived from it.
    pub mu: f64,
    /// PCG stops when ||A z - b|| / ||b|| drops below this.
    pub pcg_tol: f64,
    /// Iteration cap; `None` means `ceil(10 * sqrt(n))`.
    pub pcg_max_iter: Option<usize>,
    /// Diagonal regularization, only needed for hand-built graphs that have
    /// zero-degree pixels.
    pub ridge: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            pcg_tol: DEFAULT_PCG_TOL,
            pcg_max_iter: None,
            ridge: 0.0,
        }
    }
}

impl SolveConfig {
    /// Pairwise coupling coefficient, `1/(1+mu)`, in (0, 1).
    pub fn alpha(&self) -> f64 {
        1.0 / (1.0 + self.mu)
    }

    /// Unary coefficient, `mu/(1+mu)`; `alpha + beta = 1`.
    pub fn beta(&self) -> f64 {
        self.mu / (1.0 + self.mu)
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu must be > 0, got {}",
                self.mu
            )));
        }
        if !(self.pcg_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pcg_tol must be > 0, got {}",
                self.pcg_tol
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ridge must be >= 0, got {}",
                self.ridge
            )));
        }
        Ok(())
    }

    fn max_iter(&self, n: usize) -> usize {
        self.pcg_max_iter
            .unwrap_or_else(|| (10.0 * (n as f64).sqrt()).ceil() as usize)
            .max(1)
    }
}

/// Convergence record of one per-class solve.
#[derive(Debug, Clone)]
pub struct ClassSolve {
    pub iterations: usize,
    /// Final relative residual ||A z - b|| / ||b||.
    pub residual: f64,
    /// Energy E(z_k, f_k); NaN when a zero-degree pixel makes it undefined.
    pub energy: f64,
}

/// Continuous per-class assignments, their argmax labeling, and per-class
/// solver statistics.
#[derive(Debug, Clone)]
pub struct Solution {
    /// H x W x K tensor; channel k is class k's continuous assignment.
    pub z: Tensor3,
    /// Per-pixel argmax over classes, ties to the lower index.
    pub labels: LabelMap,
    pub per_class: Vec<ClassSolve>,
}

/// Scalar energy of one class assignment. Errors on any zero-degree pixel
/// since the unary target `f_i / d_i` is undefined there.
pub fn energy(g: &AffinityGraph, z: &[f64], f: &[f64], mu: f64) -> Result<f64> {
    check_lengths(g, z, f)?;
    let mut unary = 0.0;
    for (i, (&d, (&zi, &fi))) in g.degrees().iter().zip(z.iter().zip(f)).enumerate() {
        if d <= 0.0 {
            return Err(Error::ZeroDegree { pixel: i });
        }
        let r = zi - fi / d;
        unary += d * r * r;
    }
    let mut pairwise = 0.0;
    for &(i, j, w) in g.edges() {
        let diff = z[i as usize] - z[j as usize];
        pairwise += w * diff * diff;
    }
    Ok(0.5 * mu * unary + 0.5 * pairwise)
}

/// Gradient of [`energy`]: `mu*D*z - mu*f + (D - W)*z`. Vanishes exactly at
/// the closed-form solution.
pub fn energy_gradient(g: &AffinityGraph, z: &[f64], f: &[f64], mu: f64) -> Result<Vec<f64>> {
    check_lengths(g, z, f)?;
    let mut grad = vec![0.0; g.n()];
    for (i, (&d, (&zi, &fi))) in g.degrees().iter().zip(z.iter().zip(f)).enumerate() {
        if d <= 0.0 {
            return Err(Error::ZeroDegree { pixel: i });
        }
        grad[i] = mu * (d * zi - fi) + d * zi;
    }
    for &(i, j, w) in g.edges() {
        grad[i as usize] -= w * z[j as usize];
        grad[j as usize] -= w * z[i as usize];
    }
    Ok(grad)
}

fn check_lengths(g: &AffinityGraph, z: &[f64], f: &[f64]) -> Result<()> {
    if z.len() != g.n() || f.len() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} pixels, z has {}, f has {}",
            g.n(),
            z.len(),
            f.len()
        )));
    }
    Ok(())
}

/// Compressed sparse rows of `A = D - alpha*W + ridge*I`.
struct SystemMatrix {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    diag: Vec<f64>,
}

impl SystemMatrix {
    fn build(g: &AffinityGraph, alpha: f64, ridge: f64) -> Self {
        let n = g.n();
        let mut counts = vec![1usize; n]; // diagonal entry per row
        for &(i, j, _) in g.edges() {
            counts[i as usize] += 1;
            counts[j as usize] += 1;
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut col = vec![0u32; nnz];
        let mut val = vec![0.0; nnz];
        let mut cursor = row_ptr.clone();
        let diag: Vec<f64> = g.degrees().iter().map(|d| d + ridge).collect();
        for i in 0..n {
            col[cursor[i]] = i as u32;
            val[cursor[i]] = diag[i];
            cursor[i] += 1;
        }
        for &(i, j, w) in g.edges() {
            let (i, j) = (i as usize, j as usize);
            col[cursor[i]] = j as u32;
            val[cursor[i]] = -alpha * w;
            cursor[i] += 1;
            col[cursor[j]] = i as u32;
            val[cursor[j]] = -alpha * w;
            cursor[j] += 1;
        }
        Self {
            row_ptr,
            col,
            val,
            diag,
        }
    }

    fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[k] * x[self.col[k] as usize];
            }
            out[i] = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradient for `A x = b`.
/// Returns (x, iterations, relative residual, converged).
fn pcg(a: &SystemMatrix, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, usize, f64, bool) {
    let n = a.n();
    let norm_b = norm(b);
    if norm_b == 0.0 {
        return (vec![0.0; n], 0, 0.0, true);
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&a.diag) {
            *z = r / d;
        }
    };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rho = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut rel = 1.0;
    for iter in 1..=max_iter {
        a.mul(&p, &mut q);
        let step = rho / dot(&p, &q);
        for ((x, r), (p, q)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&q)) {
            *x += step * p;
            *r -= step * q;
        }
        rel = norm(&r) / norm_b;
        if rel <= tol {
            return (x, iter, rel, true);
        }
        precond(&r, &mut z);
        let rho_next = dot(&r, &z);
        let beta = rho_next / rho;
        rho = rho_next;
        for (p, z) in p.iter_mut().zip(&z) {
            *p = z + beta * *p;
        }
    }
    (x, max_iter, rel, false)
}

fn solve_class(
    g: &AffinityGraph,
    a: &SystemMatrix,
    f: &[f64],
    cfg: &SolveConfig,
    class: usize,
) -> Result<(Vec<f64>, ClassSolve)> {
    let beta = cfg.beta();
    let b: Vec<f64> = f.iter().map(|v| beta * v).collect();
    let (z, iterations, residual, converged) = pcg(a, &b, cfg.pcg_tol, cfg.max_iter(g.n()));
    if !converged {
        return Err(Error::PcgNoConvergence {
            class,
            iterations,
            residual,
        });
    }
    let energy = energy(g, &z, f, cfg.mu).unwrap_or(f64::NAN);
    Ok((
        z,
        ClassSolve {
            iterations,
            residual,
            energy,
        },
    ))
}

/// Solves one binary (foreground/background) problem: `(D - alpha*W) z = beta*f`
/// for a raw per-pixel score vector `f`.
pub fn solve_binary(g: &AffinityGraph, f: &[f64], cfg: &SolveConfig) -> Result<(Vec<f64>, ClassSolve)> {
    cfg.validate()?;
    if f.len() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} pixels, f has {}",
            g.n(),
            f.len()
        )));
    }
    require_positive_degrees(g, cfg)?;
    let a = SystemMatrix::build(g, cfg.alpha(), cfg.ridge);
    solve_class(g, &a, f, cfg, 0)
}

fn require_positive_degrees(g: &AffinityGraph, cfg: &SolveConfig) -> Result<()> {
    if cfg.ridge > 0.0 {
        return Ok(());
    }
    match g.degrees().iter().position(|d| *d <= 0.0) {
        Some(pixel) => Err(Error::ZeroDegree { pixel }),
        None => Ok(()),
    }
}

/// Closed-form minimization of the global energy for all K classes. The K
/// solves share one matrix and run independently (in parallel); results merge
/// in class order, so the output is deterministic.
pub fn closed_form_solve(
    g: &AffinityGraph,
    unary: &UnaryField,
    cfg: &SolveConfig,
) -> Result<Solution> {
    cfg.validate()?;
    if unary.pixels() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} pixels, unary field has {}",
            g.n(),
            unary.pixels()
        )));
    }
    require_positive_degrees(g, cfg)?;
    let k = unary.classes();
    let a = SystemMatrix::build(g, cfg.alpha(), cfg.ridge);

    let solved: Vec<(Vec<f64>, ClassSolve)> = (0..k)
        .into_par_iter()
        .map(|class| solve_class(g, &a, unary.class_plane(class), cfg, class))
        .collect::<Result<_>>()?;

    let (h, w) = (unary.height(), unary.width());
    let pixels = g.n();
    let mut data = Vec::with_capacity(pixels * k);
    let mut per_class = Vec::with_capacity(k);
    for (z, stats) in solved {
        data.extend_from_slice(&z);
        per_class.push(stats);
    }
    let z = Tensor3::new(h, w, k, data)?;

    let mut labels = vec![0u32; pixels];
    for (p, label) in labels.iter_mut().enumerate() {
        let mut best = z.channel(0)[p];
        for c in 1..k {
            let v = z.channel(c)[p];
            if v > best {
                best = v;
                *label = c as u32;
            }
        }
    }
    let labels = LabelMap::new(h, w, labels, k as u32)?;
    Ok(Solution {
        z,
        labels,
        per_class,
    })
}

/// Total discrete Potts energy used by [`icm_baseline`]:
/// `sum_i -ln(max(f_i(k_i), floor)) + sum_{i<j} w_ij * [k_i != k_j]`.
pub fn icm_energy(g: &AffinityGraph, unary: &UnaryField, labels: &LabelMap) -> f64 {
    let mut e = 0.0;
    for (p, &l) in labels.labels().iter().enumerate() {
        e -= unary.prob(p, l as usize).max(ICM_PROB_FLOOR).ln();
    }
    for &(i, j, w) in g.edges() {
        if labels.labels()[i as usize] != labels.labels()[j as usize] {
            e += w;
        }
    }
    e
}

/// Iterated conditional modes on the discrete Potts energy, initialized at
/// the per-pixel argmax of the unary field. Pixels are updated in index order
/// (Gauss-Seidel style), so every sweep's total energy is non-increasing; the
/// loop stops early once a sweep changes nothing.
pub fn icm_baseline(g: &AffinityGraph, unary: &UnaryField, sweeps: usize) -> Result<LabelMap> {
    if unary.pixels() != g.n() {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} pixels, unary field has {}",
            g.n(),
            unary.pixels()
        )));
    }
    let n = g.n();
    let k = unary.classes();
    let mut labels = unary.argmax_labels().labels().to_vec();

    // Neighbor lists over the raw affinities (no alpha scaling).
    let adj = SystemMatrix::build(g, -1.0, 0.0); // off-diagonals hold +w
    let mut per_class = vec![0.0; k];
    for _ in 0..sweeps {
        let mut changed = 0usize;
        for p in 0..n {
            per_class.iter_mut().for_each(|v| *v = 0.0);
            let mut total = 0.0;
            for idx in adj.row_ptr[p]..adj.row_ptr[p + 1] {
                let q = adj.col[idx] as usize;
                if q == p {
                    continue;
                }
                let w = adj.val[idx];
                per_class[labels[q] as usize] += w;
                total += w;
            }
            let mut best_label = 0u32;
            let mut best_cost = f64::INFINITY;
            for c in 0..k {
                // Potts cost: weight mass of neighbors labeled differently.
                let cost =
                    -unary.prob(p, c).max(ICM_PROB_FLOOR).ln() + (total - per_class[c]);
                if cost < best_cost {
                    best_cost = cost;
                    best_label = c as u32;
                }
            }
            if best_label != labels[p] {
                labels[p] = best_label;
                changed += 1;
            }
        }
        if changed == 0 {
            break;
        }
    }
    LabelMap::new(unary.height(), unary.width(), labels, k as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::AffinityGraph;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_pixel_graph() -> AffinityGraph {
        AffinityGraph::from_edges(2, vec![(0, 1, 1.0)]).unwrap()
    }

    fn unary_from_rows(h: usize, w: usize, rows: Vec<Vec<f64>>) -> UnaryField {
        // rows[p][k]
        let k = rows[0].len();
        let mut data = vec![0.0; h * w * k];
        for (p, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                data[c * h * w + p] = *v;
            }
        }
        UnaryField::from_softmax(Tensor3::new(h, w, k, data).unwrap()).unwrap()
    }

    #[test]
    fn energy_vanishes_at_unary_target_with_zero_weight_edges() {
        // z_i = f_i / d_i everywhere and every positive-weight edge connects
        // equal z values; the zero-weight edge contributes nothing.
        let g = AffinityGraph::from_edges(
            3,
            vec![(0, 1, 1.0), (1, 2, 0.0), (0, 2, 1.0)],
        )
        .unwrap();
        assert_eq!(g.degrees(), &[2.0, 1.0, 1.0]);
        let c = 0.4;
        let f = vec![2.0 * c, c, c];
        let z: Vec<f64> = f
            .iter()
            .zip(g.degrees())
            .map(|(f, d)| f / d)
            .collect();
        let e = energy(&g, &z, &f, 0.025).unwrap();
        assert!(e.abs() < 1e-15);
    }

    #[test]
    fn energy_of_constant_assignment_is_unary_only() {
        let g = two_pixel_graph();
        let z = vec![0.7, 0.7];
        let f = vec![0.0, 0.0];
        let mu = 0.025;
        let e = energy(&g, &z, &f, mu).unwrap();
        let expect = 0.5 * mu * (1.0 * 0.49 + 1.0 * 0.49);
        assert!((e - expect).abs() < 1e-15);
    }

    #[test]
    fn two_pixel_energy_hand_computed() {
        // d = (1,1), w = 1, mu = 0.025, z = (1,0), f = (1,1):
        // unary = mu/2 * (0 + 1), pairwise = 1/2 * 1.
        let g = two_pixel_graph();
        let e = energy(&g, &[1.0, 0.0], &[1.0, 1.0], 0.025).unwrap();
        assert!((e - 0.5125).abs() < 1e-15);
        // Same assignment with f = (1,0): only the pairwise term remains.
        let e = energy(&g, &[1.0, 0.0], &[1.0, 0.0], 0.025).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_degree_is_an_error() {
        let g = AffinityGraph::from_edges(3, vec![(0, 1, 1.0), (1, 2, 0.0)]).unwrap();
        assert!(matches!(
            energy(&g, &[0.0; 3], &[0.0; 3], 0.025),
            Err(Error::ZeroDegree { pixel: 2 })
        ));
        assert!(matches!(
            energy_gradient(&g, &[0.0; 3], &[0.0; 3], 0.025),
            Err(Error::ZeroDegree { pixel: 2 })
        ));
    }

    #[test]
    fn gradient_at_zero_is_minus_mu_f() {
        let g = two_pixel_graph();
        let f = vec![0.3, 0.9];
        let grad = energy_gradient(&g, &[0.0, 0.0], &f, 0.025).unwrap();
        for (gv, fv) in grad.iter().zip(&f) {
            assert!((gv + 0.025 * fv).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let n = rng.gen_range(4..32);
            let mut edges = Vec::new();
            for i in 0..n {
                edges.push((i, (i + 1) % n, rng.gen_range(0.1..1.0)));
            }
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                if i != j && !edges.iter().any(|(a, b, _)| {
                    (*a, *b) == (i.min(j), i.max(j)) || (*a, *b) == (i, j) || (*a, *b) == (j, i)
                }) {
                    edges.push((i, j, rng.gen_range(0.1..1.0)));
                }
            }
            let g = AffinityGraph::from_edges(n, edges).unwrap();
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mu = 0.025;
            let grad = energy_gradient(&g, &z, &f, mu).unwrap();
            let step = 1e-6;
            let g_max = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                let mut zp = z.clone();
                zp[i] += step;
                let mut zm = z.clone();
                zm[i] -= step;
                let fd = (energy(&g, &zp, &f, mu).unwrap() - energy(&g, &zm, &f, mu).unwrap())
                    / (2.0 * step);
                assert!(
                    (grad[i] - fd).abs() <= 1e-5 * g_max.max(1e-12),
                    "component {}: {} vs {}",
                    i,
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn two_pixel_closed_form() {
        // A = [[1, -a], [-a, 1]], f = (1, 0): z = beta/(1-a^2) * (1, a),
        // which is exactly (41/81, 40/81) at mu = 0.025.
        let g = two_pixel_graph();
        let cfg = SolveConfig::default();
        let (z, stats) = solve_binary(&g, &[1.0, 0.0], &cfg).unwrap();
        assert!((z[0] - 41.0 / 81.0).abs() < 1e-9, "z0 = {}", z[0]);
        assert!((z[1] - 40.0 / 81.0).abs() < 1e-9, "z1 = {}", z[1]);
        assert!(stats.residual <= cfg.pcg_tol);
    }

    #[test]
    fn zero_unary_gives_zero_solution_and_class_zero_labels() {
        let g = AffinityGraph::from_edges(4, vec![(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0)]).unwrap();
        let (z, stats) = solve_binary(&g, &[0.0; 4], &SolveConfig::default()).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert_eq!(stats.iterations, 0);

        let u = unary_from_rows(
            1,
            4,
            vec![
                vec![0.5, 0.5],
                vec![0.5, 0.5],
                vec![0.5, 0.5],
                vec![0.5, 0.5],
            ],
        );
        let sol = closed_form_solve(&g, &u, &SolveConfig::default()).unwrap();
        // Equal unaries diffuse to equal z: every tie resolves to class 0.
        assert!(sol.labels.labels().iter().all(|l| *l == 0));
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 24;
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n, rng.gen_range(0.2..1.0)));
        }
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (z, _) = solve_binary(&g, &f, &SolveConfig::default()).unwrap();
        let grad = energy_gradient(&g, &z, &f, DEFAULT_MU).unwrap();
        let f_inf = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let g_inf = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(g_inf <= 1e-8 * (1.0 + f_inf), "gradient norm {}", g_inf);
    }

    #[test]
    fn scaling_f_by_power_of_two_scales_z_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 16;
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n, rng.gen_range(0.2..1.0)));
            if i + 4 < n {
                edges.push((i, i + 4, rng.gen_range(0.2..1.0)));
            }
        }
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let scaled: Vec<f64> = f.iter().map(|v| 4.0 * v).collect();
        let cfg = SolveConfig::default();
        let (z, _) = solve_binary(&g, &f, &cfg).unwrap();
        let (z4, _) = solve_binary(&g, &scaled, &cfg).unwrap();
        for (a, b) in z.iter().zip(&z4) {
            assert_eq!(4.0 * a, *b);
        }
    }

    #[test]
    fn per_class_solves_match_joint_solve_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 12;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, rng.gen_range(0.2..1.0))).collect();
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a = rng.gen_range(0.1..0.8);
                vec![a, 1.0 - a]
            })
            .collect();
        let u = unary_from_rows(1, n, rows);
        let cfg = SolveConfig::default();
        let joint = closed_form_solve(&g, &u, &cfg).unwrap();
        for k in 0..2 {
            let (z, _) = solve_binary(&g, u.class_plane(k), &cfg).unwrap();
            assert_eq!(joint.z.channel(k), z.as_slice());
        }
    }

    #[test]
    fn labels_are_row_argmax_of_z() {
        let g = AffinityGraph::from_edges(3, vec![(0, 1, 0.5), (1, 2, 0.5)]).unwrap();
        let u = unary_from_rows(
            1,
            3,
            vec![vec![0.9, 0.1], vec![0.5, 0.5], vec![0.1, 0.9]],
        );
        let sol = closed_form_solve(&g, &u, &SolveConfig::default()).unwrap();
        for p in 0..3 {
            let by_hand = if sol.z.channel(1)[p] > sol.z.channel(0)[p] {
                1
            } else {
                0
            };
            assert_eq!(sol.labels.labels()[p], by_hand);
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 64;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, rng.gen_range(0.5..1.0))).collect();
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cfg = SolveConfig {
            pcg_max_iter: Some(1),
            pcg_tol: 1e-14,
            ..SolveConfig::default()
        };
        match solve_binary(&g, &f, &cfg) {
            Err(Error::PcgNoConvergence {
                iterations,
                residual,
                ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn zero_degree_pixel_requires_ridge() {
        let g = AffinityGraph::from_edges(3, vec![(0, 1, 1.0), (1, 2, 0.0)]).unwrap();
        let f = vec![1.0, 0.0, 0.0];
        assert!(matches!(
            solve_binary(&g, &f, &SolveConfig::default()),
            Err(Error::ZeroDegree { pixel: 2 })
        ));
        let cfg = SolveConfig {
            ridge: 1e-6,
            ..SolveConfig::default()
        };
        assert!(solve_binary(&g, &f, &cfg).is_ok());
    }

    #[test]
    fn sgd_on_the_energy_reaches_the_closed_form_answer() {
        // Gradient descent on E must converge to the same minimizer PCG finds.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 20;
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n, rng.gen_range(0.2..1.0)));
        }
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (z_pcg, _) = solve_binary(&g, &f, &SolveConfig::default()).unwrap();

        let d_max = g.degrees().iter().cloned().fold(0.0f64, f64::max);
        let step = 1.0 / ((2.0 + DEFAULT_MU) * d_max);
        let mut z = vec![0.0; n];
        for _ in 0..20_000 {
            let grad = energy_gradient(&g, &z, &f, DEFAULT_MU).unwrap();
            for (z, g) in z.iter_mut().zip(&grad) {
                *z -= step * g;
            }
        }
        for (a, b) in z.iter().zip(&z_pcg) {
            assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn icm_with_zero_pairwise_is_argmax() {
        let g = AffinityGraph::from_edges(3, vec![(0, 1, 0.0), (1, 2, 0.0), (0, 2, 1e-300)])
            .unwrap();
        let u = unary_from_rows(
            1,
            3,
            vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]],
        );
        let labels = icm_baseline(&g, &u, 5).unwrap();
        assert_eq!(labels.labels(), u.argmax_labels().labels());
    }

    #[test]
    fn icm_fixed_point_on_uniform_field() {
        let g = AffinityGraph::from_edges(4, vec![(0, 1, 5.0), (1, 2, 5.0), (2, 3, 5.0)]).unwrap();
        let u = unary_from_rows(
            1,
            4,
            vec![vec![0.5, 0.5]; 4],
        );
        // Argmax init is all class 0; with uniform unaries and strong uniform
        // coupling the constant labeling is already a fixed point.
        let labels = icm_baseline(&g, &u, 10).unwrap();
        assert!(labels.labels().iter().all(|l| *l == 0));
    }

    #[test]
    fn icm_first_sweep_strictly_decreases_energy_on_noisy_instance() {
        // Planted two-region line with 10% label noise in the unaries.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|p| {
                let truth = usize::from(p >= n / 2);
                let flip = rng.gen_range(0..10) == 0;
                let label = if flip { 1 - truth } else { truth };
                let mut row = vec![0.2, 0.2];
                row[label] = 0.8;
                row
            })
            .collect();
        let u = unary_from_rows(1, n, rows);
        let before = icm_energy(&g, &u, &u.argmax_labels());
        let after = icm_energy(&g, &u, &icm_baseline(&g, &u, 1).unwrap());
        assert!(after < before, "{} vs {}", after, before);
    }

    #[test]
    fn icm_sweep_energy_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30;
        let mut edges = Vec::new();
        for i in 0..n - 1 {
            edges.push((i, i + 1, rng.gen_range(0.0..2.0)));
        }
        let g = AffinityGraph::from_edges(n, edges).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = rng.gen_range(0.05..0.95);
                vec![a, 1.0 - a]
            })
            .collect();
        let u = unary_from_rows(1, n, rows);
        let mut prev = icm_energy(&g, &u, &u.argmax_labels());
        for sweeps in 1..=6 {
            let e = icm_energy(&g, &u, &icm_baseline(&g, &u, sweeps).unwrap());
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }
}
