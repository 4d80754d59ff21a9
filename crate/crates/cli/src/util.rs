//! Small shared helpers: error-to-exit-code mapping, seed substreams, and
//! file digests for run manifests.

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Exit code 2 for usage/validation problems, 1 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

pub fn usage(msg: impl fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn runtime(msg: impl fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

/// Derives a named substream from the run seed, so samplers, negative
/// sampling, initialization, and robustness draws are independently
/// reproducible.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.rotate_left(17)
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| runtime(format!("cannot read {} for digest: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
