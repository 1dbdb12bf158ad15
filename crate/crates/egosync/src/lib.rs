//! Storage formats, pipeline stages and the command-line front end around
//! `egosync-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use error::{AppError, Result};
