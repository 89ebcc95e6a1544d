//! Workbench around the super-block MatMul stack: the BFPT tensor
//! container, the op-count analyzer and the command implementations used
//! by the `sbmm` binary.

pub mod commands;
pub mod error;
pub mod kvfile;
pub mod opcount;
pub mod synth;
pub mod tensor;

pub use error::{CliError, Result};
