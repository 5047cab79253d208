//! Core library for a hard-label model-extraction lab.
//!
//! The pieces fit together like this: [`synth`] builds procedural proxy
//! corpora, [`oracle`] trains and meters the victim classifier, [`nn`]
//! provides the generator / discriminator / clone networks, [`losses`]
//! holds every training objective, [`attack`] runs the budgeted
//! extraction loop, and [`evalkit`] measures the result.

pub mod attack;
pub mod data;
pub mod error;
pub mod evalkit;
pub mod kv;
pub mod losses;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

/// Format tag written into every serialized artifact (models, checkpoints,
/// manifests) so stale files are rejected instead of misread.
pub const FORMAT_VERSION: u32 = 1;
