//! End-to-end pipeline for peak-level interpretation of in-situ XRD patterns
//! from a lithium-ion cell: a physics-based synthetic dataset generator, a
//! 1-d CNN with a single-head attention tap, multi-task training, and
//! attention-weight visualization over the diffraction pattern.

pub mod error;
pub mod preproc;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
