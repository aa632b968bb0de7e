//! Adaptive-margin cosine losses for out-of-distribution robustness under
//! dataset bias, with the colored-MNIST benchmark they are evaluated on.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod loss;
pub mod margin;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;

use std::path::PathBuf;

/// Directory holding the four MNIST IDX files: `$MODBIAS_DATA` if set,
/// otherwise `data/mnist` at the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    match std::env::var_os("MODBIAS_DATA") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}
