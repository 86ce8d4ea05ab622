//! Configured experiment pipelines over the `elastic-tickets` library.

pub mod commands;
pub mod config;

use elastic_tickets::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Serde(_) => EXIT_CONFIG,
        Error::Incompatible(_) => EXIT_INCOMPATIBLE,
        _ => EXIT_RUNTIME,
    }
}
