//! Penalized function-on-function regression with identifiability
//! diagnostics.

pub mod cli;
pub mod diagnose;
pub mod dgp;
pub mod error;
pub mod fpc;
pub mod fit;
pub mod funbasis;
pub mod harness;
pub mod linalg;
pub mod penalize;

pub use error::{Error, Result};
