use std::fmt;

/// Why a path failed validation against a sequence pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathFault {
    /// Jump `index` sets its site to the base it already holds.
    NonMutatingJump { index: usize },
    /// Jump `index` refers to a site or base outside the sequence/alphabet.
    OutOfRange { index: usize },
    /// Jump `index` is not strictly later than its predecessor, or lies outside (0, T).
    TimeOrder { index: usize },
    /// Replaying every jump does not end in the target sequence.
    WrongEndpoint,
}

impl fmt::Display for PathFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFault::NonMutatingJump { index } => write!(f, "jump {} does not change its site", index + 1),
            PathFault::OutOfRange { index } => write!(f, "jump {} has site or base out of range", index + 1),
            PathFault::TimeOrder { index } => write!(f, "jump {} violates 0 < t1 < ... < tm < T", index + 1),
            PathFault::WrongEndpoint => write!(f, "path does not end in the target sequence"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("FASTA line {line}: {msg}")]
    Fasta { line: usize, msg: String },
    #[error("sequences have unequal lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
    #[error("invalid symbol {symbol:?} at position {position}")]
    Symbol { symbol: char, position: usize },
    #[error("invalid rate generator: {0}")]
    Generator(String),
    #[error("invalid context model: {0}")]
    Context(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("endpoint unreachable at this T")]
    Unreachable,
    #[error("invalid path: {0}")]
    InvalidPath(PathFault),
    #[error("state space of {states} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u128, limit: u128 },
    #[error("{r} mutated sites exceed the enumeration limit of {limit}")]
    TooManySites { r: usize, limit: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures as opposed to bad input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Unreachable)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
