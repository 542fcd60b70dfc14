//! Bottom-up ridge leverage score sampling and Nystrom kernel ridge regression.

use blas_src as _;

pub mod error;
pub mod linalg;

pub use error::{Error, Result};
