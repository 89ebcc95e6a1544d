//! Error type shared by the codec, kernel, simulator, driver and profiler.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input value outside the representable / accepted range.
    #[error("range error: {0}")]
    Range(String),

    /// Malformed bytes, bit patterns or file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Dimension or length mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Unknown opcode while decoding an instruction stream.
    #[error("decode error at word {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    /// Instruction stream ended before a payload was complete.
    #[error("stream underrun at word {offset}: {msg}")]
    Underrun { offset: usize, msg: String },

    /// On-chip buffer capacity exceeded.
    #[error("buffer error: {0}")]
    Buffer(String),

    /// Scheduler touched a slot that was never written.
    #[error("scheduler error: {0}")]
    Scheduler(String),

    /// Instruction sequence violates the session protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A tiling plan cannot fit the configured buffers.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// API misuse (re-entrant phase scope, emit on an open session, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Degenerate model input (zero-work dims, non-positive baseline, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A unit error that aborted a simulation session, tagged with the
    /// instruction index and the unit that raised it.
    #[error("simulation aborted at instruction {index} in {unit}: {source}")]
    Sim {
        index: usize,
        unit: &'static str,
        source: Box<Error>,
    },
}
