use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record written to every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Subcommand arguments with every default and seed resolved; feeding
    /// them back reproduces the run.
    pub args: serde_json::Value,
    /// Effective configuration, for reading only.
    #[serde(default)]
    pub resolved: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputFile>,
    pub version: String,
    pub wall_time: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        maip::io::read_json(path).map_err(CliError::from_input)
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Fails when an input changed since the manifest was written.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for (name, input) in &self.inputs {
            let now = hash_file(&input.path)?;
            if now != input.sha256 {
                return Err(CliError::bad_input(format!(
                    "input {name} ({}) changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn version() -> String {
    format!("maip-cli {} / maip {}", env!("CARGO_PKG_VERSION"), maip::VERSION)
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects hashed inputs under stable names.
#[derive(Debug, Default)]
pub struct Inputs(pub BTreeMap<String, InputFile>);

impl Inputs {
    pub fn add(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let sha256 = hash_file(path)?;
        self.0.insert(
            name.into(),
            InputFile {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }
}
