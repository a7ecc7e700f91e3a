use crate::{CliError, CliResult};
use occfield::manifest::Manifest;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// What a command prints: text lines for people, one JSON value for
/// scripts. A command may still fail after producing its report.
pub struct Report {
    pub lines: Vec<String>,
    pub json: serde_json::Value,
    pub failure: Option<CliError>,
}

impl Report {
    pub fn new(json: serde_json::Value) -> Self {
        Self { lines: Vec::new(), json, failure: None }
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    /// A closed stdout (e.g. piped into `head`) is not an error.
    pub fn print(&self, json: bool) {
        let mut out = std::io::stdout().lock();
        let _ = if json {
            writeln!(out, "{}", serde_json::to_string_pretty(&self.json).expect("report serializes"))
        } else {
            self.lines.iter().try_for_each(|l| writeln!(out, "{l}"))
        };
    }

    pub fn into_result(self) -> CliResult<()> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

pub fn require_file(flag: &str, path: &Path) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(config(format!("{flag}: no such file: {}", path.display())))
    }
}

pub fn require_dir(flag: &str, path: &Path) -> CliResult<PathBuf> {
    if path.is_dir() {
        Ok(path.to_path_buf())
    } else {
        Err(config(format!("{flag}: no such directory: {}", path.display())))
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Core(occfield::Error::Config(msg.into()))
}

/// Writes `value` as pretty JSON to `dir/name` and records it.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, manifest: &mut Manifest) -> CliResult<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    manifest.add_file(dir, name)?;
    Ok(())
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}
