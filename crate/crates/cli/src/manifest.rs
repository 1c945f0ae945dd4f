use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Provenance record written next to every output artifact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the binary name; replaying them reproduces the outputs.
    pub argv: Vec<String>,
    /// Fully resolved parameters, defaults included.
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_ms: u128,
    pub versions: Versions,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Versions {
    pub sketchmix: String,
    pub manifest_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            sketchmix: env!("CARGO_PKG_VERSION").to_string(),
            manifest_format: 1,
        }
    }
}

/// Location of the manifest that belongs to `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: &str,
        argv: &[String],
        params: serde_json::Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        elapsed: Duration,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            params,
            seed,
            inputs,
            outputs,
            wall_ms: elapsed.as_millis(),
            versions: Versions::current(),
        }
    }

    /// Writes the manifest beside the first output.
    pub fn save(&self) -> CliResult<()> {
        let Some(primary) = self.outputs.first() else {
            return Ok(());
        };
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(manifest_path(primary), text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Core(sketchmix::Error::Format {
                what: "manifest",
                reason: e.to_string(),
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("/a/b/out.bin")),
            PathBuf::from("/a/b/out.bin.manifest.json")
        );
        assert_eq!(
            manifest_path(Path::new("x")),
            PathBuf::from("x.manifest.json")
        );
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o.bin");
        let m = RunManifest::new(
            "gen",
            &["gen".into(), "--seed".into(), "3".into()],
            serde_json::json!({"seed": 3}),
            Some(3),
            vec![],
            vec![out.clone()],
            Duration::from_millis(12),
        );
        m.save().unwrap();
        assert_eq!(RunManifest::load(&manifest_path(&out)).unwrap(), m);
    }
}
