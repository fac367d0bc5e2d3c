//! Batch front end for the tabreward engine: JSONL in, JSONL out.

pub mod commands;
pub mod error;
pub mod io;

pub use commands::Ctx;
pub use error::CliError;
