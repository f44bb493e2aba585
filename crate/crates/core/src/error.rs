use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// A loss or gradient went non-finite. `location` names the layer index
    /// or parameter block where it was first observed.
    #[error("numeric error at {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    #[error("protocol error at byte {offset}: {detail}")]
    Protocol { offset: u64, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    /// An edge run stopped part way; `partial` covers the samples that
    /// completed.
    #[error("run aborted after {completed} samples: {source}")]
    Aborted {
        completed: usize,
        partial: Box<crate::runtime::BenchReport>,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(offset: u64, detail: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn protocol(offset: u64, detail: impl Into<String>) -> Self {
        Error::Protocol {
            offset,
            detail: detail.into(),
        }
    }
}
