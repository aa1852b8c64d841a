use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticRow;
use crate::error::{Error, Result};
use crate::io::snapshot::list_snapshots;
use crate::scheme::{RunConfig, WindowReport};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub file: String,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one CLI invocation, written next to its outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// False until the command finished; a failed run leaves it false with `error` set.
    pub complete: bool,
    pub config: Option<RunConfig>,
    pub config_echo: Option<String>,
    pub windows: Vec<WindowReport>,
    pub timings: Vec<Timing>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub all_pass: Option<bool>,
    pub snapshots: Vec<SnapshotEntry>,
    /// Other files written by the command, relative to the output directory.
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_NAME), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every listed snapshot exists in `dir` and every snapshot in `dir` is listed.
    pub fn check_consistency(&self, dir: &Path) -> Result<()> {
        for s in &self.snapshots {
            if !dir.join(&s.file).is_file() {
                return Err(Error::InvalidArgument(format!(
                    "manifest lists {} which is missing from {}",
                    s.file,
                    dir.display()
                )));
            }
        }
        for p in list_snapshots(dir)? {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if !self.snapshots.iter().any(|s| s.file == name) {
                return Err(Error::InvalidArgument(format!(
                    "{name} is on disk but not listed in the manifest"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_in_both_directions() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("run");
        m.snapshots.push(SnapshotEntry {
            file: "snap_00000.qgfs".into(),
            t: 0.0,
        });
        assert!(m.check_consistency(dir.path()).is_err());
        std::fs::write(dir.path().join("snap_00000.qgfs"), b"").unwrap();
        m.check_consistency(dir.path()).unwrap();
        std::fs::write(dir.path().join("snap_00001.qgfs"), b"").unwrap();
        assert!(m.check_consistency(dir.path()).is_err());

        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
