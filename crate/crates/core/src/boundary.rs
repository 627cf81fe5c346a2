//! Boundary readout: boundary probability as a sigmoid over a learned linear
//! combination of bilinearly interpolated feature maps, plus the training
//! loop (quartile-balanced sampling, soft-label cross-entropy SGD) and
//! non-maximum suppression thinning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::BoundaryMap;
use crate::tensor::Tensor3;

/// Default number of training epochs.
pub const DEFAULT_EPOCHS: usize = 50;
/// Default number of balanced training samples.
pub const DEFAULT_SAMPLE_COUNT: usize = 80_000;
/// Default SGD learning rate.
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
/// Default SGD batch size.
pub const DEFAULT_BATCH_SIZE: usize = 256;

/// Sigmoid outputs are clamped into the open interval (0, 1) by this margin
/// so extreme logits cannot round to exactly 0 or 1 in f64.
const SIGMOID_CLAMP: f64 = 1e-15;

/// One weight per feature channel plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWeights {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BoundaryWeights {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::InvalidParameter(
                "boundary weights must be finite".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(channel_count: usize) -> Self {
        Self {
            weights: vec![0.0; channel_count],
            bias: 0.0,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.weights.len()
    }

    /// Serializes as a 1 x 1 x (C+1) tensor, bias last.
    pub fn to_tensor(&self) -> Tensor3 {
        let mut data = self.weights.clone();
        data.push(self.bias);
        Tensor3::new(1, 1, data.len(), data).expect("weights are finite")
    }

    pub fn from_tensor(t: &Tensor3) -> Result<Self> {
        if t.height() != 1 || t.width() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "weights tensor must be 1x1xC, got {}x{}x{}",
                t.height(),
                t.width(),
                t.channels()
            )));
        }
        let mut data = t.data().to_vec();
        let bias = data.pop().expect("tensor has at least one channel");
        Self::new(data, bias)
    }

    /// Logit at one pixel given its per-channel feature values.
    #[inline]
    pub fn logit(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len(), self.weights.len());
        self.bias
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

/// One training point: per-channel feature values and a soft target in [0, 1]
/// (e.g. the fraction of annotators that marked the pixel as boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: Vec<f64>,
    pub target: f64,
}

/// Result of [`balanced_sample`]: the samples plus how many quartiles of the
/// target range had no candidates and were skipped.
#[derive(Debug, Clone)]
pub struct BalancedSamples {
    pub samples: Vec<TrainSample>,
    pub empty_quartiles: u32,
}

/// Training hyperparameters. The optimizer is plain SGD with a fixed batch
/// size; the learning rate is halved whenever an epoch fails to improve the
/// full training loss (the epoch is rolled back), so the per-epoch loss
/// sequence is non-increasing.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Keep the bias fixed at zero.
    pub zero_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LEARNING_RATE,
            batch: DEFAULT_BATCH_SIZE,
            seed: 0,
            zero_bias: false,
        }
    }
}

/// Weights plus the recorded loss after initialization and after each epoch.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub weights: BoundaryWeights,
    /// `epoch_losses[0]` is the loss of the initial weights; entry `e` is the
    /// accepted loss after epoch `e`.
    pub epoch_losses: Vec<f64>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
}

/// Numerically stable soft-label cross-entropy of one logit:
/// `-t*ln(sigmoid(z)) - (1-t)*ln(1-sigmoid(z))`.
#[inline]
fn bce_with_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln()
}

/// Summed cross-entropy loss of `w` over `samples`.
pub fn logistic_loss(samples: &[TrainSample], w: &BoundaryWeights) -> f64 {
    samples
        .iter()
        .map(|s| bce_with_logit(w.logit(&s.features), s.target))
        .sum()
}

/// Gradient of [`logistic_loss`] with respect to (weights, bias).
pub fn logistic_gradient(samples: &[TrainSample], w: &BoundaryWeights) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; w.channel_count()];
    let mut gb = 0.0;
    for s in samples {
        let err = sigmoid(w.logit(&s.features)) - s.target;
        for (g, x) in gw.iter_mut().zip(&s.features) {
            *g += err * x;
        }
        gb += err;
    }
    (gw, gb)
}

/// Resamples every channel of `stack` to `out_h` x `out_w` with bilinear
/// interpolation in the align-corners convention: source corner pixels map
/// exactly onto destination corners, so an identity resize is exact.
pub fn interpolate_stack(stack: &Tensor3, out_h: usize, out_w: usize) -> Result<Tensor3> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidDimensions(
            "interpolation target must be at least 1x1".into(),
        ));
    }
    let (src_h, src_w, channels) = (stack.height(), stack.width(), stack.channels());
    let scale = |src: usize, dst: usize| -> f64 {
        if dst > 1 {
            (src as f64 - 1.0) / (dst as f64 - 1.0)
        } else {
            0.0
        }
    };
    let sy = scale(src_h, out_h);
    let sx = scale(src_w, out_w);
    let mut data = vec![0.0; out_h * out_w * channels];
    for c in 0..channels {
        let plane = stack.channel(c);
        let out_plane = &mut data[c * out_h * out_w..(c + 1) * out_h * out_w];
        for y in 0..out_h {
            let fy = y as f64 * sy;
            let y0 = (fy.floor() as usize).min(src_h - 1);
            let y1 = (y0 + 1).min(src_h - 1);
            let dy = fy - y0 as f64;
            for x in 0..out_w {
                let fx = x as f64 * sx;
                let x0 = (fx.floor() as usize).min(src_w - 1);
                let x1 = (x0 + 1).min(src_w - 1);
                let dx = fx - x0 as f64;
                let top = plane[y0 * src_w + x0] * (1.0 - dx) + plane[y0 * src_w + x1] * dx;
                let bottom = plane[y1 * src_w + x0] * (1.0 - dx) + plane[y1 * src_w + x1] * dx;
                out_plane[y * out_w + x] = top * (1.0 - dy) + bottom * dy;
            }
        }
    }
    Tensor3::new(out_h, out_w, channels, data)
}

/// Boundary probability map: per pixel, sigmoid of the weighted sum of the
/// interpolated feature maps. Values are strictly inside (0, 1).
pub fn predict_boundary(
    stack: &Tensor3,
    w: &BoundaryWeights,
    out_h: usize,
    out_w: usize,
) -> Result<BoundaryMap> {
    if stack.channels() != w.channel_count() {
        return Err(Error::ShapeMismatch(format!(
            "stack has {} channels but weights expect {}",
            stack.channels(),
            w.channel_count()
        )));
    }
    let interp = interpolate_stack(stack, out_h, out_w)?;
    let pixels = out_h * out_w;
    let mut values = vec![w.bias; pixels];
    for (c, weight) in w.weights.iter().enumerate() {
        let plane = interp.channel(c);
        for (v, x) in values.iter_mut().zip(plane) {
            *v += weight * x;
        }
    }
    for v in values.iter_mut() {
        *v = sigmoid(*v);
    }
    BoundaryMap::new(out_h, out_w, values)
}

/// Quartile of the target-value range a sample falls into:
/// [0,.25), [.25,.5), [.5,.75), [.75,1].
#[inline]
fn quartile_of(v: f64) -> usize {
    if v < 0.25 {
        0
    } else if v < 0.5 {
        1
    } else if v < 0.75 {
        2
    } else {
        3
    }
}

/// Draws `n` training samples balanced across the four quartiles of the
/// target-value range. `targets` is the ground-truth boundary map at the
/// resolution the stack is interpolated to. Quartiles with no candidate
/// pixels are skipped (counted in the result); the budget is spread over the
/// populated quartiles with counts differing by at most one. Within a
/// quartile sampling is without replacement unless the quartile holds fewer
/// pixels than its share. Deterministic for a fixed seed.
pub fn balanced_sample(
    targets: &BoundaryMap,
    stack: &Tensor3,
    n: usize,
    seed: u64,
) -> Result<BalancedSamples> {
    if n < 4 {
        return Err(Error::InvalidParameter(format!(
            "need at least 4 samples, got {}",
            n
        )));
    }
    let (h, w) = (targets.height(), targets.width());
    let interp = interpolate_stack(stack, h, w)?;
    let channels = interp.channels();
    let pixels = h * w;

    let mut buckets: [Vec<u32>; 4] = Default::default();
    for p in 0..pixels {
        buckets[quartile_of(targets.values()[p])].push(p as u32);
    }
    let populated = buckets.iter().filter(|b| !b.is_empty()).count();
    let empty_quartiles = (4 - populated) as u32;

    let base = n / populated;
    let mut remainder = n % populated;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for bucket in buckets.iter_mut() {
        if bucket.is_empty() {
            continue;
        }
        let mut want = base;
        if remainder > 0 {
            want += 1;
            remainder -= 1;
        }
        let chosen: Vec<u32> = if bucket.len() >= want {
            bucket.partial_shuffle(&mut rng, want).0.to_vec()
        } else {
            (0..want)
                .map(|_| bucket[rng.gen_range(0..bucket.len())])
                .collect()
        };
        for p in chosen {
            let p = p as usize;
            let features: Vec<f64> = (0..channels).map(|c| interp.channel(c)[p]).collect();
            samples.push(TrainSample {
                features,
                target: targets.values()[p],
            });
        }
    }
    Ok(BalancedSamples {
        samples,
        empty_quartiles,
    })
}

/// Trains boundary weights by SGD on the soft-label cross-entropy loss,
/// starting from zero weights. See [`train_boundary_run`] for the loss trace.
pub fn train_boundary(samples: &[TrainSample], cfg: &TrainConfig) -> Result<BoundaryWeights> {
    Ok(train_boundary_run(samples, cfg)?.weights)
}

/// As [`train_boundary`], also returning the accepted loss after every epoch.
pub fn train_boundary_run(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainingRun> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be > 0, got {}",
            cfg.lr
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    let channels = samples[0].features.len();
    for s in samples {
        if s.features.len() != channels {
            return Err(Error::ShapeMismatch(
                "inconsistent feature lengths across samples".into(),
            ));
        }
        if !(0.0..=1.0).contains(&s.target) {
            return Err(Error::InvalidParameter(format!(
                "target {} outside [0,1]",
                s.target
            )));
        }
    }

    let mut w = BoundaryWeights::zeros(channels);
    let mut prev_loss = logistic_loss(samples, &w);
    let mut epoch_losses = vec![prev_loss];
    let mut lr = cfg.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        let snapshot = w.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let inv = 1.0 / chunk.len() as f64;
            let mut gw = vec![0.0; channels];
            let mut gb = 0.0;
            for &i in chunk {
                let s = &samples[i];
                let err = sigmoid(w.logit(&s.features)) - s.target;
                for (g, x) in gw.iter_mut().zip(&s.features) {
                    *g += err * x;
                }
                gb += err;
            }
            for (wi, g) in w.weights.iter_mut().zip(&gw) {
                *wi -= lr * g * inv;
            }
            if !cfg.zero_bias {
                w.bias -= lr * gb * inv;
            }
        }
        let loss = logistic_loss(samples, &w);
        if !loss.is_finite() || w.weights.iter().any(|v| !v.is_finite()) || !w.bias.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if loss > prev_loss {
            // Reject the epoch and retry with a smaller step.
            w = snapshot;
            lr *= 0.5;
            epoch_losses.push(prev_loss);
        } else {
            prev_loss = loss;
            epoch_losses.push(loss);
        }
    }
    Ok(TrainingRun {
        weights: w,
        epoch_losses,
    })
}

/// Non-maximum suppression: keeps only pixels that are strict local maxima
/// along the Sobel gradient direction of the probability map (quantized to
/// four directions); everything else becomes 0. Ties suppress both pixels;
/// zero-gradient pixels (ridge crests) keep their value when they are a
/// strict maximum along any of the four directions. Surviving values are
/// unchanged and the result is flagged thinned. Maps already flagged thinned
/// pass through untouched, making repeated application idempotent.
pub fn nms_thin(b: &BoundaryMap) -> BoundaryMap {
    if b.is_thinned() {
        return b.clone();
    }
    let (h, w) = (b.height(), b.width());
    let v = b.values();
    let at = |y: i64, x: i64| -> f64 {
        // Replicate-clamp for gradient estimation.
        let y = y.clamp(0, h as i64 - 1) as usize;
        let x = x.clamp(0, w as i64 - 1) as usize;
        v[y * w + x]
    };
    let neighbor = |y: i64, x: i64| -> Option<f64> {
        (y >= 0 && x >= 0 && y < h as i64 && x < w as i64)
            .then(|| v[y as usize * w + x as usize])
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let center = v[y as usize * w + x as usize];
            if center <= 0.0 {
                continue;
            }
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let pairs = [
                (neighbor(y, x - 1), neighbor(y, x + 1)),
                (neighbor(y + 1, x + 1), neighbor(y - 1, x - 1)),
                (neighbor(y - 1, x), neighbor(y + 1, x)),
                (neighbor(y + 1, x - 1), neighbor(y - 1, x + 1)),
            ];
            let survives = if gx == 0.0 && gy == 0.0 {
                // On a ridge crest the gradient vanishes and the orientation
                // is undefined; a strict maximum along any fully in-bounds
                // direction keeps the crest while plateaus still tie away.
                pairs
                    .iter()
                    .any(|(n1, n2)| matches!((n1, n2), (Some(a), Some(b)) if center > *a && center > *b))
            } else {
                let mut angle = gy.atan2(gx).to_degrees();
                if angle < 0.0 {
                    angle += 180.0;
                }
                let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                    pairs[0]
                } else if angle < 67.5 {
                    pairs[1]
                } else if angle < 112.5 {
                    pairs[2]
                } else {
                    pairs[3]
                };
                center > n1.unwrap_or(0.0) && center > n2.unwrap_or(0.0)
            };
            if survives {
                out[y as usize * w + x as usize] = center;
            }
        }
    }
    BoundaryMap::with_thinned(h, w, out, true).expect("suppression preserves value range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_ridge() -> BoundaryMap {
        // Columns 2..5 hold a vertical ridge with profile (0.5, 1.0, 0.5).
        let (h, w) = (7, 7);
        let mut v = vec![0.0; h * w];
        for y in 0..h {
            v[y * w + 2] = 0.5;
            v[y * w + 3] = 1.0;
            v[y * w + 4] = 0.5;
        }
        BoundaryMap::new(h, w, v).unwrap()
    }

    #[test]
    fn constant_upsample_of_single_pixel() {
        let t = Tensor3::new(1, 1, 1, vec![0.7]).unwrap();
        let up = interpolate_stack(&t, 4, 4).unwrap();
        assert!(up.data().iter().all(|v| (*v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn checkerboard_2x2_to_3x3() {
        let t = Tensor3::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = interpolate_stack(&t, 3, 3).unwrap();
        // Corners hit source pixels exactly; edges and center average.
        let expected = [0.0, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.0];
        for (got, want) in up.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        }
    }

    #[test]
    fn identity_resize_is_exact() {
        let t = Tensor3::from_fn(5, 4, 3, |y, x, c| (y * 7 + x * 3 + c) as f64 * 0.13).unwrap();
        let same = interpolate_stack(&t, 5, 4).unwrap();
        assert_eq!(t, same);
    }

    #[test]
    fn interpolation_stays_in_channel_range() {
        let t = Tensor3::from_fn(3, 3, 2, |y, x, c| ((y * 3 + x) as f64).sin() + c as f64).unwrap();
        let up = interpolate_stack(&t, 8, 11).unwrap();
        for c in 0..2 {
            let (lo, hi) = t
                .channel(c)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                });
            for v in up.channel(c) {
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_half() {
        let stack = Tensor3::from_fn(3, 3, 4, |y, x, c| (y + x + c) as f64).unwrap();
        let w = BoundaryWeights::zeros(4);
        let b = predict_boundary(&stack, &w, 3, 3).unwrap();
        assert!(b.values().iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn prediction_is_strictly_inside_unit_interval() {
        let stack = Tensor3::new(1, 2, 1, vec![-1000.0, 1000.0]).unwrap();
        let w = BoundaryWeights::new(vec![1.0], 0.0).unwrap();
        let b = predict_boundary(&stack, &w, 1, 2).unwrap();
        assert!(b.values()[0] > 0.0);
        assert!(b.values()[1] < 1.0);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let stack = Tensor3::zeros(2, 2, 3).unwrap();
        let w = BoundaryWeights::zeros(2);
        assert!(predict_boundary(&stack, &w, 2, 2).is_err());
    }

    #[test]
    fn weights_tensor_roundtrip() {
        let w = BoundaryWeights::new(vec![0.5, -1.25, 3.0], 0.75).unwrap();
        let back = BoundaryWeights::from_tensor(&w.to_tensor()).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn balanced_sample_fills_quartiles_evenly() {
        let targets = BoundaryMap::new(
            2,
            4,
            vec![0.1, 0.1, 0.3, 0.3, 0.6, 0.6, 0.9, 0.9],
        )
        .unwrap();
        let stack = Tensor3::from_fn(2, 4, 2, |y, x, c| (y * 4 + x + c) as f64).unwrap();
        let got = balanced_sample(&targets, &stack, 8, 42).unwrap();
        assert_eq!(got.samples.len(), 8);
        assert_eq!(got.empty_quartiles, 0);
        let mut counts = [0usize; 4];
        for s in &got.samples {
            counts[quartile_of(s.target)] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2]);
    }

    #[test]
    fn balanced_sample_is_deterministic() {
        let targets = BoundaryMap::new(4, 4, (0..16).map(|i| i as f64 / 16.0).collect()).unwrap();
        let stack = Tensor3::from_fn(4, 4, 3, |y, x, c| (y + 2 * x + 3 * c) as f64).unwrap();
        let a = balanced_sample(&targets, &stack, 12, 7).unwrap();
        let b = balanced_sample(&targets, &stack, 12, 7).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = balanced_sample(&targets, &stack, 12, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn balanced_sample_skips_empty_quartiles() {
        // Binary map: only the first and last quartiles are populated.
        let targets = BoundaryMap::new(2, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let stack = Tensor3::zeros(2, 3, 1).unwrap();
        let got = balanced_sample(&targets, &stack, 9, 0).unwrap();
        assert_eq!(got.empty_quartiles, 2);
        assert_eq!(got.samples.len(), 9);
        let (lo, hi): (Vec<_>, Vec<_>) = got.samples.iter().partition(|s| s.target < 0.5);
        assert!((lo.len() as i64 - hi.len() as i64).abs() <= 1);
    }

    #[test]
    fn oversampling_small_quartile_uses_replacement() {
        let targets = BoundaryMap::new(1, 2, vec![0.1, 0.9]).unwrap();
        let stack = Tensor3::zeros(1, 2, 1).unwrap();
        let got = balanced_sample(&targets, &stack, 10, 3).unwrap();
        assert_eq!(got.samples.len(), 10);
    }

    #[test]
    fn sample_scale_of_production_runs() {
        let targets = BoundaryMap::new(
            64,
            64,
            (0..64 * 64).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let stack = Tensor3::zeros(8, 8, 2).unwrap();
        let got = balanced_sample(&targets, &stack, DEFAULT_SAMPLE_COUNT, 1).unwrap();
        assert_eq!(got.samples.len(), 80_000);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let samples = vec![TrainSample {
            features: vec![1.0, 2.0],
            target: 1.0,
        }];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let run = train_boundary_run(&samples, &cfg).unwrap();
        assert_eq!(run.weights, BoundaryWeights::zeros(2));
        assert_eq!(run.epoch_losses.len(), 1);
    }

    #[test]
    fn default_epoch_count() {
        assert_eq!(TrainConfig::default().epochs, 50);
        assert_eq!(DEFAULT_SAMPLE_COUNT, 80_000);
    }

    #[test]
    fn training_loss_is_non_increasing_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = BoundaryWeights::new(vec![2.0, -1.5, 0.5], 0.3).unwrap();
        let samples: Vec<TrainSample> = (0..400)
            .map(|_| {
                let features: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let target = if truth.logit(&features) > 0.0 { 1.0 } else { 0.0 };
                TrainSample { features, target }
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.5,
            batch: 32,
            seed: 11,
            zero_bias: false,
        };
        let a = train_boundary_run(&samples, &cfg).unwrap();
        let b = train_boundary_run(&samples, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        for pair in a.epoch_losses.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss increased: {:?}", pair);
        }
        assert!(*a.epoch_losses.last().unwrap() <= a.epoch_losses[0]);
    }

    #[test]
    fn separable_data_trains_to_high_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = BoundaryWeights::new(vec![1.5, -2.0], 0.0).unwrap();
        let samples: Vec<TrainSample> = (0..600)
            .map(|_| {
                let features: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let target = if truth.logit(&features) > 0.0 { 1.0 } else { 0.0 };
                TrainSample { features, target }
            })
            .collect();
        let w = train_boundary(&samples, &TrainConfig::default()).unwrap();
        let correct = samples
            .iter()
            .filter(|s| (sigmoid(w.logit(&s.features)) > 0.5) == (s.target > 0.5))
            .count();
        assert!(
            correct as f64 / samples.len() as f64 > 0.95,
            "accuracy {}",
            correct as f64 / samples.len() as f64
        );
    }

    #[test]
    fn divergence_reports_the_epoch() {
        // An absurd learning rate on huge features overflows the weights in
        // the first epoch.
        let samples = vec![TrainSample {
            features: vec![1e200],
            target: 0.0,
        }];
        let cfg = TrainConfig {
            lr: 1e200,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_boundary(&samples, &cfg),
            Err(crate::error::Error::Diverged { epoch: 1 })
        ));
    }

    #[test]
    fn zero_bias_mode_keeps_bias_at_zero() {
        let samples = vec![
            TrainSample {
                features: vec![1.0],
                target: 1.0,
            },
            TrainSample {
                features: vec![-1.0],
                target: 0.0,
            },
        ];
        let cfg = TrainConfig {
            zero_bias: true,
            ..TrainConfig::default()
        };
        let w = train_boundary(&samples, &cfg).unwrap();
        assert_eq!(w.bias, 0.0);
        assert!(w.weights[0] > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<TrainSample> = (0..32)
            .map(|_| TrainSample {
                features: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                target: rng.gen_range(0.0..1.0),
            })
            .collect();
        let w = BoundaryWeights::new(
            (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rng.gen_range(-0.5..0.5),
        )
        .unwrap();
        let (gw, gb) = logistic_gradient(&samples, &w);
        let step = 1e-5;
        for i in 0..4 {
            let mut plus = w.clone();
            plus.weights[i] += step;
            let mut minus = w.clone();
            minus.weights[i] -= step;
            let fd = (logistic_loss(&samples, &plus) - logistic_loss(&samples, &minus))
                / (2.0 * step);
            let rel = (gw[i] - fd).abs() / gw[i].abs().max(1e-8);
            assert!(rel < 1e-4, "weight {}: analytic {} vs fd {}", i, gw[i], fd);
        }
        let mut plus = w.clone();
        plus.bias += step;
        let mut minus = w.clone();
        minus.bias -= step;
        let fd = (logistic_loss(&samples, &plus) - logistic_loss(&samples, &minus)) / (2.0 * step);
        assert!((gb - fd).abs() / gb.abs().max(1e-8) < 1e-4);
    }

    #[test]
    fn thin_ridge_survives_nms() {
        let (h, w) = (6, 5);
        let mut v = vec![0.0; h * w];
        for y in 0..h {
            v[y * w + 2] = 0.8;
        }
        let b = BoundaryMap::new(h, w, v.clone()).unwrap();
        let thinned = nms_thin(&b);
        assert!(thinned.is_thinned());
        assert_eq!(thinned.values(), v.as_slice());
    }

    #[test]
    fn ramp_ridge_thins_to_peak_column() {
        let thinned = nms_thin(&ramp_ridge());
        for y in 0..7 {
            for x in 0..7 {
                let want = if x == 3 { 1.0 } else { 0.0 };
                assert_eq!(thinned.value(y, x), want, "pixel ({}, {})", y, x);
            }
        }
    }

    #[test]
    fn uniform_map_suppresses_everything() {
        let b = BoundaryMap::new(4, 4, vec![0.6; 16]).unwrap();
        let thinned = nms_thin(&b);
        assert!(thinned.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nms_never_raises_and_only_keeps_nonzero() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b = BoundaryMap::new(10, 10, v.clone()).unwrap();
        let t = nms_thin(&b);
        for (before, after) in v.iter().zip(t.values()) {
            assert!(*after == 0.0 || after == before);
        }
    }
}
