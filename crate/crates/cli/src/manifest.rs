//! Run manifests: every effective parameter of a run, enough to replay it.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::args::Command;
use crate::commands::manifest_path;

pub struct Manifest {
    command: Value,
    params: Map<String, Value>,
    outputs: Map<String, Value>,
    results: Map<String, Value>,
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("manifest values serialize")
}

impl Manifest {
    pub fn new(cmd: &Command) -> Self {
        Self {
            command: to_value(cmd),
            params: Map::new(),
            outputs: Map::new(),
            results: Map::new(),
        }
    }

    pub fn param(mut self, key: &str, v: impl Serialize) -> Self {
        self.params.insert(key.into(), to_value(v));
        self
    }

    pub fn output(mut self, key: &str, path: &Path) -> Self {
        self.outputs.insert(key.into(), to_value(path));
        self
    }

    pub fn result(mut self, key: &str, v: impl Serialize) -> Self {
        self.results.insert(key.into(), to_value(v));
        self
    }

    /// Writes `<primary>.manifest.json` next to the primary output.
    pub fn write(self, primary: &Path) -> Result<()> {
        let doc = serde_json::json!({
            "tool": "picbnn",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "params": self.params,
            "outputs": self.outputs,
            "results": self.results,
        });
        let path = manifest_path(primary);
        std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        println!("manifest    {}", path.display());
        Ok(())
    }

    pub fn read_command(path: &Path) -> Result<Command> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let cmd = doc
            .get("command")
            .cloned()
            .with_context(|| format!("{} has no command", path.display()))?;
        Ok(serde_json::from_value(cmd)?)
    }
}
