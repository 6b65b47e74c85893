//! Executable walkthrough of the envariance route to Born's rule.
//!
//! * [`tensor_core`]: composite state vectors, local operators, partial
//!   trace and Hermitian propagation.
//! * [`schmidt`]: biorthonormal decomposition and equal-modulus classes.
//! * [`envariance`]: phase and swap witnesses, and the envariance decision.
//! * [`fine_graining`]: counterweight construction yielding `p_k = m_k / M`.
//! * [`born_oracle`]: direct Born/trace-rule evaluation used as the
//!   independent cross-check.
//! * [`cli`]: the `born` command-line surface and its JSON reports.

pub mod born_oracle;
pub mod cli;
pub mod encoding;
pub mod envariance;
pub mod error;
pub mod fine_graining;
mod linalg;
pub mod schmidt;
pub mod tensor_core;

pub use error::{Error, Result};
pub use tensor_core::{DensityMatrix, Operator, StateVector, C64};
