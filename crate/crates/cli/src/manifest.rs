use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Record of one invocation. Everything that can influence the outputs is
/// in `inputs` (by content hash), `config` and `seed`; the timing fields are
/// the only ones that differ between otherwise identical runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Path as given → hex SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub outputs: Vec<String>,
    pub exit_code: i32,
    pub error: Option<String>,
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
}

pub struct Recorder {
    manifest: RunManifest,
    clock: Instant,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                inputs: BTreeMap::new(),
                config: Value::Null,
                seed: None,
                version: env!("CARGO_PKG_VERSION"),
                outputs: Vec::new(),
                exit_code: 0,
                error: None,
                started_unix,
                wall_clock_seconds: 0.0,
            },
            clock: Instant::now(),
        }
    }

    /// Read a file and remember its hash.
    pub fn read(&mut self, path: &Path) -> Result<String, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|_| format!("{}: not valid UTF-8", path.display()))
    }

    pub fn write(&mut self, path: &Path, contents: &str) -> Result<(), String> {
        std::fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn config(&mut self, config: impl Serialize) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(Value::Null);
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn first_output(&self) -> Option<PathBuf> {
        self.manifest.outputs.first().map(PathBuf::from)
    }

    pub fn finish(mut self, path: &Path, exit_code: i32, error: Option<String>) -> std::io::Result<()> {
        self.manifest.exit_code = exit_code;
        self.manifest.error = error;
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}
