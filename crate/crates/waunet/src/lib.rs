//! IO, file formats, training orchestration, benchmarking and the CLI for
//! the waunet engine. The pure computational core lives in `waunet-core`.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradreport;
pub mod render;
pub mod report;
pub mod trainer;
pub mod wtf1;

pub use error::{AppError, Result};
