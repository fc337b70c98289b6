use thiserror::Error;

use crate::io::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: {points} points for {clusters} clusters")]
    InsufficientPoints { points: usize, clusters: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("label {0:?} collides with a base class")]
    BaseLabelCollision(String),

    #[error("the unknown class cannot be clicked")]
    UnknownNotClickable,

    #[error("point index {index} out of range for a scene of {len} points")]
    PointOutOfRange { index: usize, len: usize },

    #[error("class {0:?} is absent from the ground truth")]
    ClassAbsent(String),

    #[error("ground truth labels are required")]
    MissingGroundTruth,

    #[error("exact enumeration over {labelings} labelings exceeds the bound of {bound}")]
    EnumerationBound { labelings: u128, bound: u128 },

    #[error("no class of the requested subset has support")]
    EmptySubset,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
