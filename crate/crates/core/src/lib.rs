//! Core of the super-block MatMul co-design kit: bit-exact Q3_K / Q8_K
//! super-block codecs, a reference quantized MatMul kernel, a
//! cycle-approximate accelerator model, the host driver with a runtime
//! backend switch, and the dual-mode profiler.
//!
//! The verification backbone is a single equality: for every well-formed
//! session the simulated accelerator's output bits equal the reference
//! kernel's. Everything else (tiling, stream formats, cycle rules) is in
//! service of keeping that equality testable.

pub mod codec;
pub mod driver;
pub mod error;
pub mod kernel;
pub mod profiler;
pub mod sim;
pub mod speedup;

pub use error::{Error, Result};
