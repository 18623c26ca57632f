//! `manifest.json`: everything needed to rerun and audit an artifact directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::GridConfig;
use crate::error::CliError;
use crate::export::{render_table, sha256_hex};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Effective configuration (after command-line overrides) as TOML.
    pub config: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub grid: GridConfig,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// File name to sha256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Verification(format!("{}: {e}", path.display())))
    }
}

/// Collects artifacts and stage timings for one output directory.
pub struct ArtifactDir {
    pub dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: BTreeMap::new(), timings: BTreeMap::new() })
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), content)?;
        self.artifacts.insert(name.to_string(), sha256_hex(content.as_bytes()));
        Ok(())
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        self.text(name, &render_table(header, rows))
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn finish(self, command: &str, config: &str, seed: Option<u64>, grid: &GridConfig) -> Result<(), CliError> {
        let m = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.to_string(),
            config_sha256: sha256_hex(config.as_bytes()),
            seed,
            grid: grid.clone(),
            timings: self.timings,
            artifacts: self.artifacts,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serialises");
        std::fs::write(self.dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }
}
