//! Training-free anomaly injection: real anomaly patterns from a labelled
//! corpus are rescaled to a target's foreground, placed inside it, and
//! blended in with a Poisson solve. Ground-truth masks come from the
//! difference against the untouched target.

pub mod dataset;
pub mod error;
pub mod imagecore;
pub mod io;
pub mod maskgen;
pub mod matting;
pub mod pipeline;
pub mod placement;
pub mod poisson;
pub mod regions;
pub mod scalematch;

pub use dataset::{load_manifest, AnomalyClass, AnomalyRecord, ManifestIndex};
pub use error::{Error, Result};
pub use imagecore::{BBox, BinaryMask, Image};
pub use pipeline::{run_batch, PipelineConfig, RunReport, SynthesisMeta, SynthesisResult};
pub use poisson::PeMode;
pub use scalematch::ScaleClass;
