//! Flat `key = value` run configuration. Lines hold one assignment each,
//! `#` starts a comment, unknown keys are errors, and every key has a
//! documented default. Explicit command-line flags override file values.

use std::fmt;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Energy balance between the unary and pairwise terms.
    pub mu: f64,
    /// Boundary-affinity smoothing.
    pub sigma_sb: f64,
    /// Softmax-affinity smoothing.
    pub sigma_sm: f64,
    /// Affinity neighborhood radius in pixels.
    pub radius: u32,
    /// Fraction of each neighborhood sampled into the graph.
    pub fraction: f64,
    /// PCG relative-residual tolerance.
    pub pcg_tol: f64,
    /// PCG iteration cap; 0 means `ceil(10 * sqrt(n))`.
    pub pcg_max_iter: usize,
    /// Diagonal regularization of the system matrix.
    pub ridge: f64,
    /// Boundary-training epochs.
    pub epochs: usize,
    /// Boundary-training learning rate.
    pub lr: f64,
    /// Boundary-training batch size.
    pub batch: usize,
    /// Number of balanced training samples.
    pub samples: usize,
    /// ICM sweep count.
    pub sweeps: usize,
    /// Base seed for every pseudo-random choice.
    pub seed: u64,
    /// Worker thread cap; 0 uses all cores.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu: bnf_core::solver::DEFAULT_MU,
            sigma_sb: bnf_core::affinity::DEFAULT_SIGMA_SB,
            sigma_sm: bnf_core::affinity::DEFAULT_SIGMA_SM,
            radius: bnf_core::affinity::DEFAULT_RADIUS,
            fraction: bnf_core::affinity::DEFAULT_SAMPLE_FRACTION,
            pcg_tol: bnf_core::solver::DEFAULT_PCG_TOL,
            pcg_max_iter: 0,
            ridge: 0.0,
            epochs: bnf_core::boundary::DEFAULT_EPOCHS,
            lr: bnf_core::boundary::DEFAULT_LEARNING_RATE,
            batch: bnf_core::boundary::DEFAULT_BATCH_SIZE,
            samples: bnf_core::boundary::DEFAULT_SAMPLE_COUNT,
            sweeps: 10,
            seed: 0,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Parses a config document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value)
                .with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("key `{}`: invalid value `{}`: {}", key, value, e))
        }
        match key {
            "mu" => self.mu = num(key, value)?,
            "sigma_sb" => self.sigma_sb = num(key, value)?,
            "sigma_sm" => self.sigma_sm = num(key, value)?,
            "radius" => self.radius = num(key, value)?,
            "fraction" => self.fraction = num(key, value)?,
            "pcg_tol" => self.pcg_tol = num(key, value)?,
            "pcg_max_iter" => self.pcg_max_iter = num(key, value)?,
            "ridge" => self.ridge = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "samples" => self.samples = num(key, value)?,
            "sweeps" => self.sweeps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            other => bail!("unknown config key `{}`", other),
        }
        Ok(())
    }
}
