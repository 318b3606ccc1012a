//! CSV and JSON emission, and the run manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::diagnostics::DiagnosticsRecord;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Diagnostics CSV: header row of [`DiagnosticsRecord::COLUMNS`], then one row per record,
/// reals with 17 significant digits and the floored count as an integer.
pub fn write_diagnostics<W: Write>(records: &[DiagnosticsRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{}", DiagnosticsRecord::COLUMNS.join(","))?;
    for r in records {
        let vals = r.values();
        let last = vals.len() - 1;
        let mut line = String::with_capacity(24 * vals.len());
        for (i, v) in vals.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            if i == last {
                line.push_str(&r.floored.to_string());
            } else {
                line.push_str(&format_real(*v));
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// `{:.16e}`, with negative zero printed as zero.
pub fn format_real(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

pub fn emit_diagnostics(records: &[DiagnosticsRecord], path: &Path) -> Result<(), OutputError> {
    let mut buf = Vec::new();
    write_diagnostics(records, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub crc32: String,
}

impl OutputFile {
    pub fn describe(path: &Path) -> Result<Self, OutputError> {
        let data = fs::read(path).map_err(io_err(path))?;
        Ok(OutputFile {
            name: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            bytes: data.len() as u64,
            crc32: format!("{:08x}", crc32fast::hash(&data)),
        })
    }
}

/// Provenance of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: SimConfig,
    pub tool_version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub outputs: Vec<OutputFile>,
}

pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(command: &str, config: &SimConfig, started: f64) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            started,
            finished: started,
            outputs: Vec::new(),
        }
    }

    /// Lists `files` with checksums and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path, files: &[PathBuf]) -> Result<PathBuf, OutputError> {
        self.outputs = files
            .iter()
            .map(|f| OutputFile::describe(f))
            .collect::<Result<_, _>>()?;
        self.finished = unix_time();
        let path = dir.join("manifest.json");
        write_json(&self, &path)?;
        Ok(path)
    }
}
