//! Run manifests: one JSON record per command invocation, stored beside
//! the command's output as `<out>.manifest.json`.

use std::path::{Path, PathBuf};

use ptdet_core::data::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Command-line arguments after the binary name, without `--out` and
    /// `--force`.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "out".into());
    name.push(MANIFEST_SUFFIX);
    out.with_file_name(name)
}

impl RunManifest {
    pub fn save(&self, out: &Path) -> CliResult<PathBuf> {
        let path = manifest_path(out);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Data(format!(
                "{}: line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }
}

/// Drops `--out <value>`, `--out=<value>` and `--force` from an argument list.
pub fn strip_output_args(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" {
            skip = true;
        } else if a != "--force" && !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_flags_are_removed() {
        let args: Vec<String> = ["gen-data", "--out", "d", "--scenes", "3", "--force", "--out=e"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(strip_output_args(&args), ["gen-data", "--scenes", "3"]);
    }

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(manifest_path(Path::new("a/b/run")), Path::new("a/b/run.manifest.json"));
        assert_eq!(manifest_path(Path::new("x.json")), Path::new("x.json.manifest.json"));
    }
}
