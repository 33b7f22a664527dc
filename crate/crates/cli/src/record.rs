use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const RUN_FILE: &str = "run.json";

/// What a command did: enough to re-run it and to find every file it
/// touched. Output paths are relative to the output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunRecord {
    pub fn new(command: &str, argv: &[String], config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: argv.to_vec(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.push(rel.display().to_string());
    }

    pub fn write(&self, out_dir: &Path) -> inquiry::Result<PathBuf> {
        let path = out_dir.join(RUN_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("run record serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| inquiry::Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> inquiry::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| inquiry::Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| inquiry::Error::json(path.display().to_string(), e))
    }
}
