use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("segment `{id}` has dimension {found}, expected {expected}")]
    SegmentDimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("utterance `{0}` has no segments")]
    EmptyUtterance(String),

    #[error("utterance `{utterance}`: segment positions are not the range 0..{len}")]
    NonContiguousPositions { utterance: String, len: usize },

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no eligible negative segment for anchor `{0}`")]
    NoEligibleNegatives(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("missing reference similarity for pair ({0}, {1})")]
    MissingReference(String, String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("no votes for keyword `{keyword}` and utterance `{utterance}`")]
    MissingVotes { keyword: String, utterance: String },

    #[error("segment `{0}` has no label")]
    MissingLabel(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("unknown segment reference `{0}`")]
    UnknownSegment(String),
}

impl Error {
    /// True for failures caused by floating point blow-ups rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Diverged { .. })
    }
}
