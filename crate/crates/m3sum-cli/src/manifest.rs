//! Run manifests: every artifact-producing command records its fully
//! resolved settings, inputs, and outputs next to what it wrote, so a run
//! can be reproduced from the manifest alone. No timestamps; identical
//! invocations produce identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    /// Input name -> path as given on the command line.
    pub inputs: BTreeMap<String, String>,
    /// Fully resolved configuration after file values and flag overrides.
    pub resolved: serde_json::Value,
    /// Paths this run wrote, manifest excluded.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            resolved: serde_json::Value::Null,
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn resolved(&mut self, value: impl Serialize) -> Result<()> {
        self.resolved = serde_json::to_value(value)?;
        Ok(())
    }

    /// Write as `manifest-<command>.json` inside `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest-{}.json", self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
