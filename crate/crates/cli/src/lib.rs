//! Library side of the `merlin` command-line tool: argument types, file
//! formats, and one function per subcommand.

pub mod cli;
pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;

pub use error::{CliError, CliResult};
