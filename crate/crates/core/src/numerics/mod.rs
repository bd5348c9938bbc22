//! Numerical substrate: matrices, reverse-mode differentiation, the matrix
//! exponential acyclicity penalty, seeded randomness, quantiles, and the
//! optimizer. Everything above this module is expressed in these terms.
//!
//! All computation is 64-bit floating point and single-threaded; any
//! parallelism belongs at the level of independent runs.

pub mod adam;
pub mod matexp;
pub mod matrix;
pub mod mlp;
pub mod quantile;
pub mod rng;
pub mod tape;

pub use adam::Adam;
pub use matexp::{acyclicity, acyclicity_grad, matexp};
pub use matrix::Matrix;
pub use mlp::{Mlp, MlpNodes};
pub use quantile::{quantile, quantile_of_sorted};
pub use rng::{SeededRng, Stream};
pub use tape::{Gradients, NodeId, Tape};

use thiserror::Error;

/// Contract violations raised by the numerics layer.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("backward requires a scalar root, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
}
