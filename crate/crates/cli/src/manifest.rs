use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Calibrate,
    Diagnose,
    Sweep,
    Oracle,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub tool: &'static str,
    pub schema: u32,
}

/// Record of one invocation, written next to its primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: CommandKind,
    pub argv: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub versions: Versions,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            argv: std::env::args().skip(1).collect(),
            inputs: BTreeMap::new(),
            versions: Versions { tool: env!("CARGO_PKG_VERSION"), schema: SCHEMA_VERSION },
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) {
        self.inputs.insert(key.to_string(), value.to_string());
    }

    /// Writes `contents` to `path` and records it.
    pub fn emit(&mut self, path: &Path, contents: &str) -> anyhow::Result<()> {
        std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path) -> anyhow::Result<PathBuf> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
