use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{BootstrapArgs, Command, FitArgs, SimulateArgs};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved subcommand options, defaults included.
    pub options: serde_json::Value,
    pub seed: u64,
    /// Input CSV (fit, bootstrap) or config file (simulate), as given.
    pub input: Option<String>,
    pub input_sha256: Option<String>,
    pub version: String,
    pub threads: usize,
    pub duration_secs: f64,
    /// Files written alongside, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Manifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// The recorded command with its options.
    pub fn invocation(&self) -> Result<Command, CliError> {
        let opts = self.options.clone();
        let bad = |e: serde_json::Error| CliError::Manifest(format!("options: {e}"));
        let cmd = match self.command.as_str() {
            "fit" => Command::Fit(serde_json::from_value::<FitArgs>(opts).map_err(bad)?),
            "bootstrap" => Command::Bootstrap(serde_json::from_value::<BootstrapArgs>(opts).map_err(bad)?),
            "simulate" => Command::Simulate(serde_json::from_value::<SimulateArgs>(opts).map_err(bad)?),
            other => return Err(CliError::Manifest(format!("cannot replay command `{other}`"))),
        };
        Ok(cmd)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Input { path: path.display().to_string(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
