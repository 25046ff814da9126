use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("record output must be scalar, found shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("dimension {d} exceeds the dense-oracle cap of {cap}")]
    DimensionTooLarge { d: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// λ = 0 leaves the objective without the quadratic confinement needed for
    /// the differential growth condition, so no log-Sobolev constant exists.
    #[error(
        "weight decay λ = 0: the objective fails Villani condition (iii) \
         (Ψ_s saturates), so no log-Sobolev/Poincaré constant can be certified"
    )]
    NoConfinement,

    #[error("contraction factor 2η/C_LS(βF) = {0} is not below 1")]
    InvalidContraction(f64),

    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
