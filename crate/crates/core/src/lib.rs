//! Shallow mimic networks.
//!
//! Train deep teacher networks (or ensembles), score a transfer set with
//! their pre-softmax logits, and fit shallow students that regress those
//! logits with an L2 objective. Students may carry a linear bottleneck
//! layer that factorizes the first weight matrix; it can be folded back
//! into a single matrix after training.
//!
//! Module map:
//!
//! - [`numerics`]: row-major `f64` matrices and the SplitMix64 stream.
//! - [`nn`]: layer specs, parameters, forward/backward, serialization.
//! - [`loss`]: cross-entropy and the three mimic objectives.
//! - [`optim`]: heavy-ball SGD and the epoch loop.
//! - [`distill`]: logit extraction, ensembles, normalization, transfer sets.
//! - [`data`]: CSV ingest, standardization, GCN, ZCA, synthetic benchmark.
//! - [`harness`]: experiment configuration and the `mimic` sub-commands.

pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod loss;
pub mod nn;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
