use alloc::string::String;

use crate::sharing::PartyId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid fixed-point configuration: {0}")]
    Config(String),

    #[error("value at index {index} is outside the sign-safe encoding range (|x| < {bound})")]
    EncodingOverflow { index: usize, bound: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ring mismatch: {0} bits vs {1} bits")]
    RingMismatch(u32, u32),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("unsupported kernel size {0} (only 1 and 3 are supported)")]
    UnsupportedKernel(usize),

    #[error("invalid party set: {0}")]
    Parties(String),

    #[error("missing share from party {0}")]
    MissingShare(PartyId),

    #[error("share scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("fraction-state violation: {0}")]
    Fraction(String),

    #[error("offline material slot {0} was already consumed")]
    StaleMaterial(u32),

    #[error("offline material mismatch: {0}")]
    Material(String),

    #[error("truncation width {d} out of range for l={l}")]
    TruncWidth { d: u32, l: u32 },

    #[error("range bound violated: {0}")]
    Range(String),

    #[error("rank {rank} out of range 1..={max}")]
    Rank { rank: usize, max: usize },

    #[error("SVD did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("insecure operation refused: {0}")]
    InsecureRefused(String),

    #[error("transport failure at party {party}, layer {layer}: {reason}")]
    Transport { party: PartyId, layer: u32, reason: String },

    #[error("channel {from}->{to} does not exist in this topology")]
    NoChannel { from: PartyId, to: PartyId },

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error("session mismatch: expected {expected}, got {got}")]
    Session { expected: u32, got: u32 },
}

impl Error {
    /// Exit-code class used by the CLI: 2 validation, 3 transport, 4 insecure refusal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Transport { .. } | Error::NoChannel { .. } | Error::Frame(_) | Error::Session { .. } => 3,
            Error::InsecureRefused(_) => 4,
            _ => 2,
        }
    }
}
