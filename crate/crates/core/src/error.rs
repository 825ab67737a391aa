use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MgsError>;

#[derive(Debug, Error)]
pub enum MgsError {
    /// Shapes or preconditions of an operation were violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    /// A loss, gradient or sample became NaN/inf.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl MgsError {
    pub fn contract(msg: impl Into<String>) -> Self {
        MgsError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        MgsError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        MgsError::Numeric(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        MgsError::Format(msg.into())
    }

    /// Short machine-readable kind, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            MgsError::Contract(_) => "contract",
            MgsError::Config(_) => "config",
            MgsError::Numeric(_) => "numeric",
            MgsError::Format(_) => "format",
            MgsError::Io(_) => "io",
        }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            MgsError::Config(_) => 2,
            MgsError::Numeric(_) | MgsError::Contract(_) => 3,
            MgsError::Format(_) | MgsError::Io(_) => 4,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($arg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::MgsError::$kind(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
