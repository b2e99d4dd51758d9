//! Mask-based MVDR beamforming with an attention-based spatial covariance
//! matrix aggregator.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of
//! the pipeline:
//!
//! - [`tensor`]: dense real/complex tensors with a reverse-mode autodiff tape
//! - [`dsp`]: STFT analysis and overlap-add synthesis
//! - [`scene`]: image-source room simulation of moving-speaker scenes
//! - [`features`]: oracle masks, instantaneous SCMs, ISCM and mag-IPD features
//! - [`estimator`]: the transformer/TAC attention-weight estimator
//! - [`beamform`]: SCM aggregation, MVDR weights and the enhancement pipeline
//! - [`training`]: the differentiable pipeline, SNR loss and Adam
//! - [`metrics`]: SI-SNR and filter-tolerant SDR
//!
//! File formats, audio IO and the command-line front end live in the
//! `asabeam` companion crate.

#![no_std]

extern crate alloc;

pub mod beamform;
pub mod dsp;
pub mod error;
pub mod estimator;
pub mod features;
pub mod metrics;
pub mod scene;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
