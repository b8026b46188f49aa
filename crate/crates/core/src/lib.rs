//! Regime detection and clustering on path space with signature-kernel
//! maximum mean discrepancies.
//!
//! The crate is organised bottom-up:
//!
//! * [`streams`] holds observed paths, transforms and windowing.
//! * [`signature`] computes truncated signatures.
//! * [`sigkernel`] evaluates untruncated, truncated and rank-2 signature kernels.
//! * [`mmd`] covers MMD estimators and null distributions.
//! * [`scoring`] provides the kernel scoring rule and similarity scores.
//! * [`detect`] contains the online detectors.
//! * [`models`] simulates synthetic paths and regime-switching streams.
//! * [`cluster`] does offline agglomerative clustering of ensembles.
//! * [`baselines`] has the SIG-CON conformance comparator.

pub mod baselines;
pub mod cluster;
pub mod detect;
pub mod error;
pub mod exec;
pub mod mmd;
pub mod models;
pub mod rng;
pub mod scoring;
pub mod sigkernel;
pub mod signature;
pub mod streams;

pub use error::{Error, Result};
