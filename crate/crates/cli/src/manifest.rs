//! Run manifests: everything needed to repeat a run, written before the
//! outputs and completed afterwards.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub parameters: serde_json::Value,
    pub seeds: Vec<u64>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// `dir/levels.csv` -> `dir/levels.manifest.json`.
pub fn beside(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    output.with_file_name(format!("{stem}.manifest.json"))
}

impl RunManifest {
    pub fn start<P: Serialize>(
        command: &str,
        argv: &[String],
        parameters: &P,
        seeds: Vec<u64>,
        outputs: Vec<PathBuf>,
        path: PathBuf,
    ) -> Result<Self, CliError> {
        let m = Self {
            command: command.into(),
            argv: argv.to_vec(),
            parameters: serde_json::to_value(parameters).map_err(tagdiff_core::Error::from)?,
            seeds,
            version: env!("CARGO_PKG_VERSION").into(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            outputs,
            notes: Vec::new(),
            path,
        };
        m.write()?;
        Ok(m)
    }

    pub fn write(&self) -> Result<(), CliError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(self).map_err(tagdiff_core::Error::from)?;
        std::fs::write(&self.path, text + "\n")?;
        Ok(())
    }

    pub fn finish(mut self, status: &str) -> Result<(), CliError> {
        self.finished_unix = Some(now());
        self.status = status.into();
        self.write()
    }
}
