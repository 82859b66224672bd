use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("backward called before forward_eval")]
    NotEvaluated,
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate gradient: every token saliency is zero")]
    DegenerateGradient,
    #[error("degenerate explanation: every surrogate coefficient is zero")]
    DegenerateExplanation,
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("singular system in least-squares fit")]
    Singular,
}
