//! Per-pixel field types: class probabilities, boundary probabilities, and
//! discrete labels. All are immutable after construction and safe to share
//! across threads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Tolerance for accepting an externally produced softmax field as normalized.
pub const SOFTMAX_SUM_TOL: f64 = 1e-5;
/// Per-pixel sum accuracy guaranteed after relaxed construction.
pub const NORMALIZED_SUM_TOL: f64 = 1e-6;

/// H x W x K field of per-pixel class probabilities.
///
/// Every value lies in [0, 1] and each pixel's probabilities sum to 1 (within
/// [`NORMALIZED_SUM_TOL`]). Channel `k` of the backing tensor is class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    tensor: Tensor3,
}

impl UnaryField {
    /// Accepts an already-normalized probability field, e.g. a softmax output.
    /// Per-pixel sums must be within [`SOFTMAX_SUM_TOL`] of 1.
    pub fn from_softmax(tensor: Tensor3) -> Result<Self> {
        let k = tensor.channels();
        let pixels = tensor.pixels();
        for v in tensor.data() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidParameter(format!(
                    "probability {} outside [0,1]",
                    v
                )));
            }
        }
        for p in 0..pixels {
            let sum: f64 = (0..k).map(|c| tensor.channel(c)[p]).sum();
            if (sum - 1.0).abs() > SOFTMAX_SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "pixel {} probabilities sum to {}, expected 1",
                    p, sum
                )));
            }
        }
        Ok(Self { tensor })
    }

    /// Accepts unnormalized nonnegative scores and normalizes each pixel to
    /// sum 1. Pixels whose scores are all zero become uniform over classes.
    pub fn from_scores(tensor: Tensor3) -> Result<Self> {
        if let Some(index) = tensor.data().iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative score at element {}",
                index
            )));
        }
        let (h, w, k) = (tensor.height(), tensor.width(), tensor.channels());
        let pixels = tensor.pixels();
        let mut data = tensor.data().to_vec();
        for p in 0..pixels {
            let sum: f64 = (0..k).map(|c| data[c * pixels + p]).sum();
            if sum == 0.0 {
                let uniform = 1.0 / k as f64;
                for c in 0..k {
                    data[c * pixels + p] = uniform;
                }
            } else {
                for c in 0..k {
                    data[c * pixels + p] /= sum;
                }
            }
        }
        Ok(Self {
            tensor: Tensor3::new(h, w, k, data)?,
        })
    }

    pub fn height(&self) -> usize {
        self.tensor.height()
    }

    pub fn width(&self) -> usize {
        self.tensor.width()
    }

    pub fn classes(&self) -> usize {
        self.tensor.channels()
    }

    pub fn pixels(&self) -> usize {
        self.tensor.pixels()
    }

    /// Probability of class `k` at linear pixel index `p`.
    #[inline]
    pub fn prob(&self, p: usize, k: usize) -> f64 {
        self.tensor.channel(k)[p]
    }

    /// Contiguous row-major probability plane of one class.
    pub fn class_plane(&self, k: usize) -> &[f64] {
        self.tensor.channel(k)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.tensor
    }

    /// Hard labels by per-pixel argmax, ties broken toward the lower class.
    pub fn argmax_labels(&self) -> LabelMap {
        let k = self.classes();
        let pixels = self.pixels();
        let mut labels = vec![0u32; pixels];
        for (p, label) in labels.iter_mut().enumerate() {
            let mut best = self.prob(p, 0);
            for c in 1..k {
                let v = self.prob(p, c);
                if v > best {
                    best = v;
                    *label = c as u32;
                }
            }
        }
        LabelMap::new(self.height(), self.width(), labels, k as u32)
            .expect("argmax labels are always in range")
    }
}

/// H x W map of boundary probability in [0, 1]. `thinned` records whether
/// non-maximum suppression has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    thinned: bool,
}

impl BoundaryMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_thinned(height, width, values, false)
    }

    pub(crate) fn with_thinned(
        height: usize,
        width: usize,
        values: Vec<f64>,
        thinned: bool,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "zero-sized boundary map {}x{}",
                height, width
            )));
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} boundary map needs {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "boundary value {} outside [0,1]",
                v
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            thinned,
        })
    }

    /// Wraps a single-channel tensor. The thinned flag is not stored on disk,
    /// so a freshly loaded map is always considered unthinned.
    pub fn from_tensor(t: &Tensor3) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "boundary map must have 1 channel, got {}",
                t.channels()
            )));
        }
        Self::new(t.height(), t.width(), t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::new(self.height, self.width, 1, self.values.clone())
            .expect("boundary values are finite")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_thinned(&self) -> bool {
        self.thinned
    }

    /// Binary PGM (P5) export, probabilities scaled to 0..=255.
    pub fn export_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let gray: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        write_pgm(path.as_ref(), self.width, self.height, &gray)
    }
}

/// H x W discrete class assignment with a known class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    classes: u32,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>, classes: u32) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions(format!(
                "zero-sized label map {}x{}",
                height, width
            )));
        }
        if classes == 0 {
            return Err(Error::InvalidParameter("class count must be >= 1".into()));
        }
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} label map needs {} labels, got {}",
                height,
                width,
                height * width,
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::InvalidParameter(format!(
                "label {} out of range for {} classes",
                l, classes
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            classes,
        })
    }

    /// Decodes a single-channel tensor of (near-)integral label values. When
    /// `classes` is absent, the class count is `max label + 1`.
    pub fn from_tensor(t: &Tensor3, classes: Option<u32>) -> Result<Self> {
        if t.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "label map must have 1 channel, got {}",
                t.channels()
            )));
        }
        let mut labels = Vec::with_capacity(t.pixels());
        for v in t.data() {
            let rounded = v.round();
            if (v - rounded).abs() > 1e-3 || rounded < 0.0 || rounded > u32::MAX as f64 {
                return Err(Error::InvalidParameter(format!(
                    "label value {} is not a class index",
                    v
                )));
            }
            labels.push(rounded as u32);
        }
        let classes = match classes {
            Some(k) => k,
            None => labels.iter().copied().max().unwrap_or(0) + 1,
        };
        Self::new(t.height(), t.width(), labels, classes)
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::new(
            self.height,
            self.width,
            1,
            self.labels.iter().map(|l| *l as f64).collect(),
        )
        .expect("labels are finite")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> u32 {
        self.classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Binary PGM (P5) export, labels spread over distinct gray levels.
    pub fn export_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let scale = if self.classes > 1 {
            255.0 / (self.classes - 1) as f64
        } else {
            0.0
        };
        let gray: Vec<u8> = self
            .labels
            .iter()
            .map(|l| (*l as f64 * scale).round() as u8)
            .collect();
        write_pgm(path.as_ref(), self.width, self.height, &gray)
    }
}

fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    let wrap = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
    write!(out, "P5\n{} {}\n255\n", width, height).map_err(wrap)?;
    out.write_all(gray).map_err(wrap)?;
    out.flush().map_err(wrap)
}
