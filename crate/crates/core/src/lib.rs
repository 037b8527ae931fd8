//! Out-of-distribution detection for 3D scalar volumes.
//!
//! The toolkit scores how far a volume lies from a training distribution
//! using intensity-histogram embeddings reduced with PCA and compared by
//! Mahalanobis or nearest-neighbor distance, alongside simple baselines
//! that operate on externally produced prediction maps (entropy over the
//! predicted area, ensemble variance, predicted-volume percentile).
//! Seeded synthetic corruptions (k-space spikes, ghosting, anisotropy,
//! elastic warps, local noise, motion) and a manifest-driven benchmark
//! harness with FPR@TPR95 / AUROC / Fechner-correlation reporting round
//! out the pipeline.
//!
//! All numeric code is generic over the scalar type through [`Real`];
//! the aliases below pin the two instantiations the standard pipeline
//! uses: `f32` voxel data (matching the on-disk formats) and `f64`
//! statistics (embeddings, PCA models, detectors, metrics).

pub mod detectors;
pub mod embedding;
mod error;
pub mod harness;
pub(crate) mod linalg;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod volgrid;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Scalar type the toolkit's numeric code is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless round-trip through `f64` (both supported scalars embed in it).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Volume with `f32` voxels, the scalar the file formats store natively.
pub type Volume32 = volgrid::Volume<f32>;
/// Volume with `f64` voxels.
pub type Volume64 = volgrid::Volume<f64>;
/// Histogram embedding at the pipeline's statistics precision.
pub type Embedding64 = embedding::Embedding<f64>;
/// PCA model at the pipeline's statistics precision.
pub type PcaModel64 = embedding::PcaModel<f64>;
/// Fitted histogram-feature detector at the pipeline's statistics precision.
pub type IhfDetector64 = detectors::IhfDetector<f64>;
