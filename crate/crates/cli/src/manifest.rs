use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Flags with every default filled in.
    pub args: serde_json::Value,
    /// Library-level configuration derived from the flags, when there is one.
    pub resolved: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(subcommand: &str, args: &impl Serialize) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            subcommand: subcommand.into(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            args: serde_json::to_value(args).expect("flags serialize"),
            resolved: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Usage(format!("manifest {} not found", path.display())),
            _ => CliError::from(repcam::Error::io(path, e)),
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("manifest {}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| repcam::Error::io(path, e).into())
    }
}

/// `dir/manifest.json` for directory outputs, `file.manifest.json` otherwise.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join("manifest.json")
    } else {
        sibling(output, "manifest.json")
    }
}

/// `a/b.rcam` with suffix `log.jsonl` gives `a/b.rcam.log.jsonl`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}
