//! Synthetic scenes with known ground truth: painted shapes give a label
//! map, its 4-neighborhood transitions give the true boundary, blurred and
//! noise-corrupted one-hot labels give blob-like unaries, and the feature
//! stack carries one channel that encodes the true boundary exactly, so the
//! boundary readout has a recoverable planted optimum.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::boundary::{sigmoid, BoundaryWeights};
use crate::error::{Error, Result};
use crate::maps::{BoundaryMap, LabelMap, UnaryField};
use crate::tensor::Tensor3;

/// Boundary pixels map to this probability through the planted channel;
/// non-boundary pixels map to `1 - BOUNDARY_HI`.
pub const BOUNDARY_HI: f64 = 0.9;

const SHAPE_RETRIES: usize = 64;

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: u32,
    /// Number of random rectangles/ellipses painted over the background.
    pub shapes: usize,
    /// Standard deviation of the Gaussian corruption of the unaries.
    pub noise_sigma: f64,
    /// Box-blur radius applied to the one-hot unaries before the noise.
    pub blur_radius: usize,
    /// Number of random smooth feature channels; the stack carries these
    /// plus one planted boundary channel.
    pub channels: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            classes: 3,
            shapes: 4,
            noise_sigma: 0.25,
            blur_radius: 3,
            channels: 16,
            seed: 0,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidDimensions("zero-sized scene".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        if self.shapes < 1 {
            return Err(Error::InvalidParameter("need at least 1 shape".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything one scene provides to the pipeline.
#[derive(Debug, Clone)]
pub struct Scene {
    pub truth: LabelMap,
    /// 1.0 exactly on the 4-neighborhood label transitions of `truth`
    /// (both sides of every transition), 0 elsewhere.
    pub boundary: BoundaryMap,
    pub unary: UnaryField,
    /// `channels` random smooth fields plus a final channel holding the
    /// logit-scaled true boundary.
    pub stack: Tensor3,
    /// Selects exactly the planted boundary channel.
    pub planted_weights: BoundaryWeights,
}

/// Deterministically generates a scene from its spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (spec.height, spec.width);

    let truth = paint_shapes(spec, &mut rng)?;
    let boundary = transition_boundary(&truth)?;
    let unary = corrupt_unary(spec, &truth, &mut rng)?;
    let (stack, planted_weights) = feature_stack(spec, &boundary, &mut rng)?;

    debug_assert_eq!(truth.height(), h);
    debug_assert_eq!(truth.width(), w);
    Ok(Scene {
        truth,
        boundary,
        unary,
        stack,
        planted_weights,
    })
}

fn paint_shapes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<LabelMap> {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u32; h * w];
    for _ in 0..spec.shapes {
        let mut painted = 0usize;
        for attempt in 0.. {
            if attempt >= SHAPE_RETRIES {
                return Err(Error::ShapeGeneration {
                    retries: SHAPE_RETRIES,
                });
            }
            let class = rng.gen_range(0..spec.classes);
            let cy = rng.gen_range(0..h) as i64;
            let cx = rng.gen_range(0..w) as i64;
            let ry = rng.gen_range(1..=(h / 3).max(1)) as i64;
            let rx = rng.gen_range(1..=(w / 3).max(1)) as i64;
            let ellipse = rng.gen_bool(0.5);
            painted = 0;
            for y in (cy - ry).max(0)..=(cy + ry).min(h as i64 - 1) {
                for x in (cx - rx).max(0)..=(cx + rx).min(w as i64 - 1) {
                    let inside = if ellipse {
                        let fy = (y - cy) as f64 / ry as f64;
                        let fx = (x - cx) as f64 / rx as f64;
                        fy * fy + fx * fx <= 1.0
                    } else {
                        true
                    };
                    if inside {
                        labels[y as usize * w + x as usize] = class;
                        painted += 1;
                    }
                }
            }
            if painted > 0 {
                break;
            }
        }
        debug_assert!(painted > 0);
    }
    LabelMap::new(h, w, labels, spec.classes)
}

/// Marks both sides of every 4-neighborhood label transition with 1.0.
fn transition_boundary(truth: &LabelMap) -> Result<BoundaryMap> {
    let (h, w) = (truth.height(), truth.width());
    let mut v = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = truth.label(y, x);
            let differs = (x + 1 < w && truth.label(y, x + 1) != l)
                || (x > 0 && truth.label(y, x - 1) != l)
                || (y + 1 < h && truth.label(y + 1, x) != l)
                || (y > 0 && truth.label(y - 1, x) != l);
            if differs {
                v[y * w + x] = 1.0;
            }
        }
    }
    BoundaryMap::new(h, w, v)
}

/// Box blur with a truncated window at the borders, normalized by the actual
/// window size, so blurring a per-pixel partition of unity preserves it.
fn box_blur(values: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let r = radius as i64;
    // Horizontal then vertical pass.
    let mut tmp = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let lo = (x - r).max(0);
            let hi = (x + r).min(w as i64 - 1);
            let mut acc = 0.0;
            for xx in lo..=hi {
                acc += values[y as usize * w + xx as usize];
            }
            tmp[y as usize * w + x as usize] = acc / (hi - lo + 1) as f64;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let lo = (y - r).max(0);
            let hi = (y + r).min(h as i64 - 1);
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += tmp[yy as usize * w + x as usize];
            }
            out[y as usize * w + x as usize] = acc / (hi - lo + 1) as f64;
        }
    }
    out
}

fn corrupt_unary(spec: &SceneSpec, truth: &LabelMap, rng: &mut ChaCha8Rng) -> Result<UnaryField> {
    let (h, w) = (spec.height, spec.width);
    let k = spec.classes as usize;
    let pixels = h * w;
    let mut data = vec![0.0; pixels * k];
    for (p, l) in truth.labels().iter().enumerate() {
        data[*l as usize * pixels + p] = 1.0;
    }
    for c in 0..k {
        let blurred = box_blur(&data[c * pixels..(c + 1) * pixels], h, w, spec.blur_radius);
        data[c * pixels..(c + 1) * pixels].copy_from_slice(&blurred);
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in data.iter_mut() {
            *v = (*v + normal.sample(rng)).max(0.0);
        }
    }
    UnaryField::from_scores(Tensor3::new(h, w, k, data)?)
}

fn feature_stack(
    spec: &SceneSpec,
    boundary: &BoundaryMap,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor3, BoundaryWeights)> {
    let (h, w) = (spec.height, spec.width);
    let pixels = h * w;
    let channels = spec.channels + 1;
    let mut data = Vec::with_capacity(pixels * channels);
    let smooth_radius = (h.min(w) / 8).max(2);
    for _ in 0..spec.channels {
        let noise: Vec<f64> = (0..pixels).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = box_blur(&noise, h, w, smooth_radius);
        let peak = field.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        data.extend(field.into_iter().map(|v| v / peak));
    }
    // Planted channel: the logit of the sigmoid-mapped boundary, so weight 1
    // on this channel reproduces the mapped boundary exactly.
    let logit_hi = (BOUNDARY_HI / (1.0 - BOUNDARY_HI)).ln();
    data.extend(
        boundary
            .values()
            .iter()
            .map(|v| if *v > 0.0 { logit_hi } else { -logit_hi }),
    );
    let stack = Tensor3::new(h, w, channels, data)?;
    let mut weights = vec![0.0; channels];
    weights[channels - 1] = 1.0;
    Ok((stack, BoundaryWeights::new(weights, 0.0)?))
}

/// The probability the planted channel assigns to each pixel: `BOUNDARY_HI`
/// on boundary pixels, `1 - BOUNDARY_HI` elsewhere.
pub fn sigmoid_mapped_boundary(boundary: &BoundaryMap) -> BoundaryMap {
    let logit_hi = (BOUNDARY_HI / (1.0 - BOUNDARY_HI)).ln();
    let values: Vec<f64> = boundary
        .values()
        .iter()
        .map(|v| sigmoid(if *v > 0.0 { logit_hi } else { -logit_hi }))
        .collect();
    BoundaryMap::new(boundary.height(), boundary.width(), values)
        .expect("sigmoid output is in range")
}
