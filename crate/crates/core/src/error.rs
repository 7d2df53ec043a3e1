use std::fmt;

/// Tensor axis, used to name the offending dimension in shape errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channels,
    Height,
    Width,
    Kernel,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::Channels => "channels",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::Kernel => "kernel",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: {axis} mismatch (expected {expected}, found {found})")]
    Dimension {
        op: &'static str,
        axis: Axis,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{what}: parse error at byte {offset}: {msg}")]
    Parse {
        what: &'static str,
        offset: usize,
        msg: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("non-finite value first produced in `{layer}`")]
    NonFinite { layer: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prefixes an I/O error with the file it concerns.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: Axis, expected: usize, found: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            found,
        }
    }

    pub(crate) fn parse(what: &'static str, offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
