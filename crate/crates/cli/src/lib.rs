//! Command-line driver for the framenet toolkit.

pub mod commands;
pub mod config;
pub mod sweep;

use framenet::Error;

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Dimension(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::Divergence { .. } => EXIT_NUMERICAL,
        Error::Format { .. } | Error::Io(_) => EXIT_IO,
    }
}
