//! Pairwise pixel affinities and the sparse affinity graph.
//!
//! Two pixels are similar when no strong boundary crosses the straight line
//! between them: `w_sb = exp(-M/sigma_sb)` with `M` the maximum boundary
//! value on the rasterized segment. An optional object-level term compares
//! softmax probabilities of the shared hard label, `w_sm = exp(-D/sigma_sm)`
//! (zero across different hard labels), and the combined affinity is
//! `exp(w_sm) * w_sb`. The graph stores each undirected edge once (i < j)
//! together with the degree vector `d_i = sum_j w_ij`.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maps::{BoundaryMap, LabelMap, UnaryField};

/// Default neighborhood radius in pixels.
pub const DEFAULT_RADIUS: u32 = 20;
/// Default fraction of each neighborhood that is sampled.
pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.1;
/// Default boundary-affinity smoothing parameter.
pub const DEFAULT_SIGMA_SB: f64 = 0.1;
/// Default softmax-affinity smoothing parameter.
pub const DEFAULT_SIGMA_SM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct AffinityConfig {
    pub sigma_sb: f64,
    pub sigma_sm: f64,
    /// Neighborhood radius: neighbors are pixels at Euclidean distance <= radius.
    pub radius: u32,
    /// Fraction of each pixel's neighborhood that is sampled, in (0, 1].
    pub sample_fraction: f64,
    pub seed: u64,
    /// Multiply in the softmax similarity term when a unary field is given.
    pub use_softmax_term: bool,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            sigma_sb: DEFAULT_SIGMA_SB,
            sigma_sm: DEFAULT_SIGMA_SM,
            radius: DEFAULT_RADIUS,
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            seed: 0,
            use_softmax_term: false,
        }
    }
}

impl AffinityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sb > 0.0) || !(self.sigma_sm > 0.0) {
            return Err(Error::InvalidParameter(
                "sigma_sb and sigma_sm must be > 0".into(),
            ));
        }
        if self.radius < 1 {
            return Err(Error::InvalidParameter("radius must be >= 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sample_fraction {} outside (0, 1]",
                self.sample_fraction
            )));
        }
        Ok(())
    }
}

/// Sparse symmetric pixel-affinity matrix plus its degree vector. Each
/// undirected edge is stored once with `i < j`; entries are sorted by (i, j).
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    n: usize,
    edges: Vec<(u32, u32, f64)>,
    degrees: Vec<f64>,
}

impl AffinityGraph {
    /// Builds a graph from an arbitrary edge list. Edges are canonicalized to
    /// `i < j`; self-edges, duplicates, out-of-range indices, and negative or
    /// non-finite weights are rejected.
    pub fn from_edges(
        n: usize,
        list: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut edges: Vec<(u32, u32, f64)> = Vec::new();
        for (i, j, w) in list {
            if i == j {
                return Err(Error::InvalidParameter(format!("self edge at pixel {}", i)));
            }
            if i >= n || j >= n {
                return Err(Error::PixelOutOfBounds {
                    index: i.max(j),
                    pixels: n,
                });
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "edge weight {} must be finite and >= 0",
                    w
                )));
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            edges.push((a as u32, b as u32, w));
        }
        edges.sort_unstable_by_key(|e| (e.0, e.1));
        if edges.windows(2).any(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(Error::InvalidParameter("duplicate edge".into()));
        }
        Ok(Self::from_sorted_edges(n, edges))
    }

    /// `edges` must already be canonical (i < j), sorted, and deduplicated.
    fn from_sorted_edges(n: usize, edges: Vec<(u32, u32, f64)>) -> Self {
        let mut degrees = vec![0.0; n];
        for &(i, j, w) in &edges {
            degrees[i as usize] += w;
            degrees[j as usize] += w;
        }
        Self { n, edges, degrees }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges, canonical `i < j`, sorted by (i, j).
    pub fn edges(&self) -> &[(u32, u32, f64)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn min_degree(&self) -> f64 {
        self.degrees.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Text dump: header `n m`, then one `i j w` line per undirected edge in
    /// (i, j) order.
    pub fn write_text(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "{} {}", self.n, self.edges.len())?;
        for (i, j, w) in &self.edges {
            writeln!(out, "{} {} {}", i, j, w)?;
        }
        Ok(())
    }
}

/// Nearest integer to `num / den` with halves rounded toward +infinity.
/// `den` must be positive.
#[inline]
fn round_div(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    (2 * num + den).div_euclid(2 * den)
}

/// Pixels on the discrete straight-line path between two pixel centers:
/// one pixel per step along the major axis, the minor coordinate rounded
/// from the exact rational position. Integer arithmetic throughout.
fn for_each_line_pixel(
    from: (i64, i64),
    to: (i64, i64),
    mut visit: impl FnMut(i64, i64),
) {
    let (y0, x0) = from;
    let (y1, x1) = to;
    let (dy, dx) = (y1 - y0, x1 - x0);
    let steps = dy.abs().max(dx.abs());
    if steps == 0 {
        visit(y0, x0);
        return;
    }
    for s in 0..=steps {
        let y = round_div(y0 * steps + s * dy, steps);
        let x = round_div(x0 * steps + s * dx, steps);
        visit(y, x);
    }
}

/// Maximum boundary value crossed by the straight-line path between pixels
/// `i` and `j` (linear indices). Endpoints are excluded whenever the segment
/// has interior pixels; adjacent or identical pixels use the endpoints
/// themselves. Symmetric in its arguments.
pub fn max_crossing(b: &BoundaryMap, i: usize, j: usize) -> Result<f64> {
    let (h, w) = (b.height(), b.width());
    let pixels = h * w;
    for p in [i, j] {
        if p >= pixels {
            return Err(Error::PixelOutOfBounds { index: p, pixels });
        }
    }
    let coord = |p: usize| ((p / w) as i64, (p % w) as i64);
    // Canonical direction keeps the rasterization, and hence the maximum,
    // symmetric in (i, j).
    let (from, to) = {
        let (a, b) = (coord(i.min(j)), coord(i.max(j)));
        (a, b)
    };
    let steps = (to.0 - from.0).abs().max((to.1 - from.1).abs());
    let mut best = f64::NEG_INFINITY;
    if steps <= 1 {
        best = b.value(from.0 as usize, from.1 as usize)
            .max(b.value(to.0 as usize, to.1 as usize));
    } else {
        let mut s = 0;
        for_each_line_pixel(from, to, |y, x| {
            if s != 0 && s != steps {
                best = best.max(b.value(y as usize, x as usize));
            }
            s += 1;
        });
    }
    Ok(best)
}

/// Boundary-crossing affinity `exp(-M_ij / sigma_sb)`, in (0, 1].
pub fn boundary_affinity(b: &BoundaryMap, i: usize, j: usize, sigma_sb: f64) -> Result<f64> {
    if !(sigma_sb > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_sb must be > 0, got {}",
            sigma_sb
        )));
    }
    Ok((-max_crossing(b, i, j)? / sigma_sb).exp())
}

/// Softmax similarity: zero when the hard labels differ, otherwise
/// `exp(-|u_i(c) - u_j(c)| / sigma_sm)` with `c` the shared hard label.
pub fn softmax_affinity(
    u: &UnaryField,
    hard: &LabelMap,
    i: usize,
    j: usize,
    sigma_sm: f64,
) -> Result<f64> {
    if !(sigma_sm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma_sm must be > 0, got {}",
            sigma_sm
        )));
    }
    let pixels = u.pixels();
    for p in [i, j] {
        if p >= pixels {
            return Err(Error::PixelOutOfBounds { index: p, pixels });
        }
    }
    let (li, lj) = (hard.labels()[i], hard.labels()[j]);
    if li != lj {
        return Ok(0.0);
    }
    let c = li as usize;
    let d = (u.prob(i, c) - u.prob(j, c)).abs();
    Ok((-d / sigma_sm).exp())
}

/// Combined affinity `exp(w_sm) * w_sb`: the object-level term enters through
/// the exponential so it can only boost, never veto, the boundary term.
#[inline]
pub fn combined_affinity(w_sm: f64, w_sb: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&w_sm));
    debug_assert!(w_sb > 0.0 && w_sb <= 1.0);
    w_sm.exp() * w_sb
}

/// Offsets (dy, dx) of the Euclidean disk of the given radius, center excluded.
fn disk_offsets(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let r2 = (radius as i64) * (radius as i64);
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dy == 0 && dx == 0) || (dy as i64 * dy as i64 + dx as i64 * dx as i64) > r2 {
                continue;
            }
            offsets.push((dy, dx));
        }
    }
    offsets
}

/// Builds the sparse affinity graph. For every pixel a seeded pseudo-random
/// subset of its radius-`r` disk is chosen — `max(1, floor(fraction * disk
/// size))` neighbors, without replacement — and the union of all sampled
/// pairs becomes the edge set, so no pixel is isolated and the matrix is
/// symmetric. Deterministic for a fixed seed regardless of thread count.
pub fn build_graph(
    b: &BoundaryMap,
    u: Option<&UnaryField>,
    cfg: &AffinityConfig,
) -> Result<AffinityGraph> {
    cfg.validate()?;
    let (h, w) = (b.height(), b.width());
    let n = h * w;
    if n < 2 {
        return Err(Error::InvalidDimensions(
            "affinity graph needs at least two pixels".into(),
        ));
    }
    if let Some(u) = u {
        if u.height() != h || u.width() != w {
            return Err(Error::ShapeMismatch(format!(
                "boundary {}x{} vs unary {}x{}",
                h,
                w,
                u.height(),
                u.width()
            )));
        }
    }
    let softmax = if cfg.use_softmax_term {
        u.map(|u| (u, u.argmax_labels()))
    } else {
        None
    };
    let offsets = disk_offsets(cfg.radius);

    // Sampling is seeded per pixel, so the draw order over pixels (and the
    // thread schedule) cannot change the result.
    let mut pairs: Vec<(u32, u32)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let (y, x) = ((p / w) as i32, (p % w) as i32);
            let mut neighborhood: Vec<u32> = offsets
                .iter()
                .filter_map(|&(dy, dx)| {
                    let (ny, nx) = (y + dy, x + dx);
                    (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w)
                        .then(|| (ny as usize * w + nx as usize) as u32)
                })
                .collect();
            if neighborhood.is_empty() {
                return Vec::new();
            }
            let want = ((cfg.sample_fraction * neighborhood.len() as f64).floor() as usize)
                .max(1)
                .min(neighborhood.len());
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (p as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let (chosen, _) = neighborhood.partial_shuffle(&mut rng, want);
            let p = p as u32;
            chosen
                .iter()
                .map(|&q| if p < q { (p, q) } else { (q, p) })
                .collect()
        })
        .flatten()
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();

    let edges: Vec<(u32, u32, f64)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let w_sb = boundary_affinity(b, i as usize, j as usize, cfg.sigma_sb)?;
            let weight = match &softmax {
                Some((u, hard)) => {
                    let w_sm =
                        softmax_affinity(u, hard, i as usize, j as usize, cfg.sigma_sm)?;
                    combined_affinity(w_sm, w_sb)
                }
                None => w_sb,
            };
            Ok((i, j, weight))
        })
        .collect::<Result<_>>()?;
    Ok(AffinityGraph::from_sorted_edges(n, edges))
}
