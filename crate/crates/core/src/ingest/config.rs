//! Ingestion settings shared by the CLI, the workers and query-by-tile.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::extract::{Bins, ExtractConfig};
use super::queue::ScalingConfig;
use super::tiling::{validate_tiling, TilingError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub tile_size: usize,
    pub overlap: usize,
    pub bins: Bins,
    pub multilook_window: usize,
    pub visibility_timeout_s: f64,
    pub min_workers: usize,
    pub max_workers: usize,
    pub tasks_per_worker: usize,
    pub max_attempts: u32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            tile_size: 512,
            overlap: 0,
            bins: Bins::default(),
            multilook_window: 3,
            visibility_timeout_s: 300.0,
            min_workers: 1,
            max_workers: 8,
            tasks_per_worker: 4,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error("{0}")]
    Invalid(String),
}

impl IngestConfig {
    /// Reads a TOML file; missing keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse { path: shown, source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_tiling(self.tile_size, self.overlap)?;
        if self.multilook_window == 0 || self.multilook_window > self.tile_size {
            return Err(ConfigError::Invalid(format!("multilook_window {} out of range", self.multilook_window)));
        }
        if !(self.visibility_timeout_s > 0.0) {
            return Err(ConfigError::Invalid("visibility_timeout_s must be positive".into()));
        }
        if self.max_attempts == 0 || self.max_workers == 0 || self.min_workers > self.max_workers {
            return Err(ConfigError::Invalid("bad worker or attempt limits".into()));
        }
        Ok(())
    }

    pub fn extract(&self) -> ExtractConfig {
        ExtractConfig { bins: self.bins, multilook_window: self.multilook_window }
    }

    pub fn scaling(&self) -> ScalingConfig {
        ScalingConfig {
            min_workers: self.min_workers,
            max_workers: self.max_workers,
            tasks_per_worker: self.tasks_per_worker,
        }
    }

    pub fn visibility_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.visibility_timeout_s)
    }
}

/// File in a store root recording the settings its descriptors were made with.
pub const STORE_INGEST_FILE: &str = "ingest.json";

/// Queue journal kept next to a store by the CLI.
pub const STORE_QUEUE_FILE: &str = "queue.jsonl";

pub fn save_store_config(store_root: &Path, cfg: &IngestConfig) -> std::io::Result<()> {
    std::fs::write(store_root.join(STORE_INGEST_FILE), serde_json::to_vec_pretty(cfg)?)
}

/// Manifest directories a store was ingested from, for raw-pixel lookups.
pub const STORE_SOURCES_FILE: &str = "sources.json";

/// Adds `dir` to the store's source list if it is not there yet.
pub fn record_source(store_root: &Path, dir: &Path) -> std::io::Result<()> {
    let dir = dir.canonicalize()?;
    let mut dirs = load_sources(store_root)?;
    if !dirs.contains(&dir) {
        dirs.push(dir);
        std::fs::write(store_root.join(STORE_SOURCES_FILE), serde_json::to_vec_pretty(&dirs)?)?;
    }
    Ok(())
}

pub fn load_sources(store_root: &Path) -> std::io::Result<Vec<std::path::PathBuf>> {
    match std::fs::read(store_root.join(STORE_SOURCES_FILE)) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

/// Settings recorded by an earlier ingest, if any.
pub fn load_store_config(store_root: &Path) -> Result<Option<IngestConfig>, ConfigError> {
    let path = store_root.join(STORE_INGEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let shown = path.display().to_string();
    let bytes = std::fs::read(&path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
    let cfg: IngestConfig =
        serde_json::from_slice(&bytes).map_err(|e| ConfigError::Invalid(format!("{shown}: {e}")))?;
    cfg.validate()?;
    Ok(Some(cfg))
}
