use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<PathBuf>, config: RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_path,
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn input_file(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Records an input whose hash was computed elsewhere.
    pub fn input_hashed(&mut self, path: &Path, sha256: String) {
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256,
        });
    }

    /// Writes `contents` to `path`, creating parent directories, and records
    /// its hash.
    pub fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, contents).map_err(io_err(path))?;
        self.record_output(path)
    }

    /// Hashes a file that was written by the library.
    pub fn record_output(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Runs `f` and stores its wall-clock duration under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf, CliError> {
        if let Some(start) = self.started {
            self.timings.insert("total".into(), start.elapsed().as_secs_f64());
        }
        std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let path = out_dir.join(RUN_MANIFEST);
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}
