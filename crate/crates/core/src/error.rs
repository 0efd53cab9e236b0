use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::AnomalyClass;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("failed to encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("mask has no nonzero pixels")]
    EmptyMask,

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("resize ratio {ratio} yields a zero-sized raster")]
    ZeroSizedResize { ratio: f64 },

    #[error("mask vanished after resizing by {ratio}")]
    VanishingMask { ratio: f64 },

    #[error("resized pattern is {height}x{width}, below the {min_side}px minimum side")]
    PatternTooSmall {
        height: usize,
        width: usize,
        min_side: usize,
    },

    #[error("no legal injection location for a {height}x{width} pattern")]
    NoCandidateLocation { height: usize, width: usize },

    #[error("placement center {0:?} is not a legal injection location")]
    IllegalPlacement((usize, usize)),

    #[error("border heuristic found no foreground; use the all-ones or external-mask strategy")]
    EmptyForeground,

    #[error("no eligible records for class filter {0:?}")]
    InfeasibleClassFilter(Vec<AnomalyClass>),

    #[error("manifest {path} has no usable records")]
    EmptyManifest { path: PathBuf },

    #[error("source raster {source_dims:?} does not cover pattern box at ({top}, {left}) of size {height}x{width}")]
    MisalignedSource {
        source_dims: (usize, usize),
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },

    #[error("poisson solver did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("injection region lies entirely outside the foreground")]
    FilteredOut,

    #[error("synthesis produced no visible anomaly")]
    NoVisibleAnomaly,

    #[error("attempt cap of {attempts} reached with counters {counters:?}; rejects: {rejects:?}")]
    AttemptCapReached {
        attempts: usize,
        counters: (u32, u32, u32),
        rejects: std::collections::BTreeMap<String, usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no normal images found in {0}")]
    NoTargets(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
