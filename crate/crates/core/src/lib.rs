//! Open-world evaluation on pre-extracted backbone embeddings.
//!
//! The crate covers two pipelines that share the same feature files:
//!
//! * **Open-set recognition**: a linear probe on frozen features
//!   ([`probe`]), centering / normalization and shared shrinkage covariance
//!   ([`prep`]), four post-hoc scores where larger means more OOD-like
//!   ([`scores`]), and threshold-sweep metrics ([`metrics`]).
//! * **Few-shot class-incremental learning**: prototype banks grown over
//!   one-class sessions with nearest-class-mean readout ([`fscil`]).
//!
//! Features travel between tools in the little-endian OHFS format
//! ([`featstore`]). Everything after load runs in `f64`.

pub mod checkpoint;
pub mod featstore;
pub mod fscil;
pub mod matrix;
pub mod metrics;
pub mod prep;
pub mod probe;
pub mod scores;
pub mod seed;
pub mod synth;

pub use featstore::{FeatureSet, Manifest, SplitRole, SplitSpec};
pub use matrix::Matrix;
