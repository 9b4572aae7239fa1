//! Dense linear algebra and seeded randomness.

mod matrix;
mod rng;

pub use matrix::{axis_stats, matmul, sample_gaussian, Axis, Matrix};
pub(crate) use matrix::matmul_into;
pub use rng::{derive_seed, RngStream};
