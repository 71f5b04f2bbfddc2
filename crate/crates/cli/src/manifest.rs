use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fsncsr_core::flow::CHECKPOINT_VERSION;
use fsncsr_core::io::write_atomic;
use serde::Serialize;
use serde_json::Value;

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub fsncsr: &'static str,
    pub checkpoint_format: u32,
}

/// Record of one command invocation, written when it finishes.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// The resolved settings the command ran with.
    pub config: Value,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub versions: Versions,
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, seed: u64, config: Value) -> Self {
        RunManifest {
            command: command.into(),
            config_hash,
            seed,
            config,
            artifacts: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            versions: Versions {
                fsncsr: env!("CARGO_PKG_VERSION"),
                checkpoint_format: CHECKPOINT_VERSION,
            },
        }
    }

    pub fn finish(mut self, dir: &Path) -> fsncsr_core::Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&self)?;
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
