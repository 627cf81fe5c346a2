//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a BNFT file")]
    BadMagic,
    #[error("unsupported BNFT version {0}")]
    UnsupportedVersion(u8),
    #[error("dimension overflow: {height}x{width}x{channels} elements do not fit in memory")]
    DimensionOverflow {
        height: u64,
        width: u64,
        channels: u64,
    },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("non-finite value at element {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pixel index {index} out of bounds for {pixels} pixels")]
    PixelOutOfBounds { index: usize, pixels: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error(
        "pcg did not converge for class {class}: relative residual {residual:.3e} \
         after {iterations} iterations"
    )]
    PcgNoConvergence {
        class: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("zero degree at pixel {pixel}")]
    ZeroDegree { pixel: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("class {class} absent from both prediction and truth")]
    EmptyClass { class: u32 },
    #[error("shape generation failed after {retries} retries")]
    ShapeGeneration { retries: usize },
}

impl Error {
    /// True for failures of a numerical procedure (divergence, non-convergence)
    /// as opposed to invalid inputs. The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::PcgNoConvergence { .. }
        )
    }
}
