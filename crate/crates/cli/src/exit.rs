use std::process::ExitCode;

use featsearch_core::Error as CoreError;
use featsearch_service::config::ConfigError;
use featsearch_service::MountError;

pub const USER: u8 = 1;
pub const CORRUPT: u8 = 2;
pub const INTERNAL: u8 = 3;

/// Bad flags or bad input files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UserError(pub String);

pub fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

/// Maps the first recognisable error in the chain to an exit code.
pub fn classify(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if cause.is::<UserError>() || cause.is::<ConfigError>() {
            return ExitCode::from(USER);
        }
        if let Some(e) = cause.downcast_ref::<MountError>() {
            return ExitCode::from(match e {
                MountError::Corrupt { .. } => CORRUPT,
                MountError::Unavailable { source, .. } => core_code(source),
            });
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return ExitCode::from(core_code(e));
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return ExitCode::from(io_code(e));
        }
    }
    ExitCode::from(INTERNAL)
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Corruption { .. } | CoreError::CorruptMetadata(_) => CORRUPT,
        CoreError::Io(io) => io_code(io),
        _ => USER,
    }
}

fn io_code(e: &std::io::Error) -> u8 {
    use std::io::ErrorKind::*;
    match e.kind() {
        NotFound | PermissionDenied | AlreadyExists | InvalidInput | WouldBlock => USER,
        _ => INTERNAL,
    }
}
