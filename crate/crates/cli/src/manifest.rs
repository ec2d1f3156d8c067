//! Run manifests and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_secs: f64,
}

/// Collects what a subcommand read and wrote.
pub struct Run {
    command: &'static str,
    seed: u64,
    threads: Option<usize>,
    config: serde_json::Value,
    started: Instant,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, seed: u64, threads: Option<usize>, config: impl Serialize) -> Self {
        Run {
            command,
            seed,
            threads,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    /// Writes `path` through a temporary sibling, then renames it into place.
    pub fn output<F>(&mut self, path: &Path, write: F) -> anyhow::Result<()>
    where
        F: FnOnce(&Path) -> anyhow::Result<()>,
    {
        atomic(path, write)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn output_text(&mut self, path: &Path, text: &str) -> anyhow::Result<()> {
        self.output(path, |tmp| Ok(fs::write(tmp, text)?))
    }

    /// Writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> anyhow::Result<()> {
        let m = RunManifest {
            command: self.command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.seed,
            threads: self.threads,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&m)? + "\n";
        atomic(path, |tmp| Ok(fs::write(tmp, json)?))
    }
}

pub fn atomic<F>(path: &Path, write: F) -> anyhow::Result<()>
where
    F: FnOnce(&Path) -> anyhow::Result<()>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.partial"));
    let result = write(&tmp).and_then(|()| {
        fs::rename(&tmp, path).with_context(|| format!("moving output into {}", path.display()))
    });
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// `<file>.run.json` next to a file output.
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
