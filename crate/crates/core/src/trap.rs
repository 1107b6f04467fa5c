use thiserror::Error;

/// Abnormal termination of a program, shared by the IR interpreter and the
/// VM so that differential tests can compare outcomes directly.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Trap {
    #[error("trap: division by zero")]
    DivByZero,
    #[error("trap: memory access out of bounds")]
    OutOfBounds,
    #[error("trap: step limit exceeded")]
    StepLimit,
    #[error("trap: call depth exceeded")]
    CallDepth,
    /// The harness was misused (unknown function, wrong argument count, ...).
    #[error("invalid invocation: {0}")]
    Invalid(String),
}
