use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Why a command stopped, with the stage it stopped in.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Stage {
        stage: &'static str,
        error: delius::Error,
    },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        use delius::Error::*;
        match self {
            Failure::Usage(_) => 2,
            Failure::Stage { error, .. } => match error {
                Io { .. } | Config(_) => 2,
                Format { .. } | Data(_) | Shape(_) => 3,
                Numeric(_) | DegenerateCentroids(_) => 4,
            },
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "arguments",
            Failure::Stage { stage, .. } => stage,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "{msg}"),
            Failure::Stage { stage, error } => write!(f, "{stage}: {error}"),
        }
    }
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    flags: &'a serde_json::Value,
    /// Effective settings of each stage, including defaults not exposed as flags.
    settings: &'a serde_json::Map<String, serde_json::Value>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    wall_time_secs: f64,
    status: &'a str,
    failed_stage: Option<&'a str>,
    error: Option<String>,
}

/// Bookkeeping for one command: current stage, files read and written.
pub struct Ctx {
    pub seed: u64,
    pub csv_header: bool,
    stage: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    settings: serde_json::Map<String, serde_json::Value>,
    started: Instant,
}

impl Ctx {
    pub fn new(seed: u64, csv_header: bool) -> Self {
        Self {
            seed,
            csv_header,
            stage: "setup",
            inputs: Vec::new(),
            outputs: Vec::new(),
            settings: serde_json::Map::new(),
            started: Instant::now(),
        }
    }

    pub fn stage(&mut self, name: &'static str) {
        self.stage = name;
    }

    pub fn input<'p>(&mut self, path: &'p Path) -> &'p Path {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        path
    }

    pub fn output<'p>(&mut self, path: &'p Path) -> &'p Path {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_path_buf());
        }
        path
    }

    pub fn record(&mut self, key: &str, value: &impl Serialize) {
        let value = serde_json::to_value(value).expect("settings serialize");
        self.settings.insert(key.to_string(), value);
    }

    /// Attach the current stage to a library error.
    pub fn fail(&self, error: delius::Error) -> Failure {
        Failure::Stage {
            stage: self.stage,
            error,
        }
    }

    /// Rename every output already on disk to `<name>.partial`.
    pub fn mark_partial(&mut self) {
        for path in &mut self.outputs {
            if path.exists() {
                let mut partial = path.clone().into_os_string();
                partial.push(".partial");
                let partial = PathBuf::from(partial);
                if std::fs::rename(&*path, &partial).is_ok() {
                    *path = partial;
                }
            }
        }
        self.outputs.retain(|p| p.exists());
    }

    pub fn write_manifest(
        &self,
        path: &Path,
        subcommand: &str,
        threads: usize,
        flags: &serde_json::Value,
        failure: Option<&Failure>,
    ) -> std::io::Result<()> {
        let inputs = self
            .inputs
            .iter()
            .filter_map(|p| {
                let bytes = std::fs::read(p).ok()?;
                let digest = Sha256::digest(&bytes);
                Some(InputDigest {
                    path: p.display().to_string(),
                    sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
                })
            })
            .collect();
        let manifest = RunManifest {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            threads,
            flags,
            settings: &self.settings,
            inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            status: if failure.is_some() { "failed" } else { "ok" },
            failed_stage: failure.map(Failure::stage),
            error: failure.map(ToString::to_string),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, json + "\n")
    }
}
