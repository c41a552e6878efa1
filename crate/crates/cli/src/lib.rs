//! Command-line workbench: geometry and checkpoint I/O, run configuration
//! and the workflows behind each subcommand.

pub mod bench;
pub mod check;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod xyz;

use std::path::Path;

use hessnet_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, configuration or input files; nothing was computed.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Failure(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownElement(_)
            | Error::InvalidMolecule(_)
            | Error::CoincidentAtoms(..)
            | Error::ShapeMismatch { .. }
            | Error::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Failure(e.to_string()),
        }
    }
}

/// Write through a temporary sibling and rename, creating parent
/// directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
