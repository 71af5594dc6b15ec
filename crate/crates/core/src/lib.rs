//! Allocation-only core of the contrastive target-adaptive LSTM-VAE.
//!
//! Everything in this crate is pure computation over in-memory values:
//! receiver-keyed sequencing of flow records, a small hand-differentiated
//! LSTM/affine toolkit, the shared sequence VAE, per-domain adaptors, the
//! loss terms, the two-phase training pipeline, anomaly scoring and the
//! synthetic two-domain benchmark. File formats, the CLI and anything else
//! touching the operating system live in the `ctalvae` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod adaptors;
pub mod bench;
pub mod error;
pub mod flow;
pub mod math;
pub mod metrics;
pub mod model;
pub mod net;
pub mod objectives;
pub mod synth;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
pub use flow::{FeatureSchema, FlowRecord, Label, Normalizer, Sequence};
pub use model::{ModelBundle, ModelKind};
