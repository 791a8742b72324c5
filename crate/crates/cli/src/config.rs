//! JSON configs: strict parsing with field paths and content hashes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a config file, reporting the path of the offending field.
pub fn parse<T: DeserializeOwned>(file: &Path, text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        file: file.to_path_buf(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Loads a config and the SHA-256 of its bytes.
pub fn load<T: DeserializeOwned>(file: &Path) -> CliResult<(T, String)> {
    let bytes = fs::read(file).map_err(io_err(file))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| CliError::Config {
        file: file.to_path_buf(),
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok((parse(file, &text)?, sha256_hex(&bytes)))
}
