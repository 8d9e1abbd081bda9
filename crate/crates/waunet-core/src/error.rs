//! Error type shared by the whole engine.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong inside the core engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor extents do not line up (dimension errors).
    Shape(String),
    /// A configuration violates its invariants.
    Config(String),
    /// A target class id is outside `[0, num_classes)`.
    Label {
        index: usize,
        class: u32,
        num_classes: usize,
    },
    /// Non-finite values where finite ones are required.
    Numeric(String),
    /// API misuse, e.g. calling backward on a non-scalar.
    Usage(String),
    /// Phantom generation could not satisfy its recipe.
    Generation(String),
    /// Training aborted; the message names the offending parameter.
    Training(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Label {
                index,
                class,
                num_classes,
            } => write!(
                f,
                "label error: class id {class} at pixel {index} is outside [0, {num_classes})"
            ),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Generation(m) => write!(f, "generation error: {m}"),
            Error::Training(m) => write!(f, "training error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
