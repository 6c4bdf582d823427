//! Product manifests and the sources that list and fetch them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grd::{decode_grd, GrdError, Raster};

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("source unreachable: {0}")]
    Unreachable(String),
    #[error("bad manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("product {0} not found")]
    NotFound(String),
    #[error("product {product_id}: {reason}")]
    Corrupt { product_id: String, reason: String },
    #[error(transparent)]
    Grd(#[from] GrdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

fn default_spacing() -> f64 {
    6.0
}

/// One product as described by its JSON manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub uri: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_spacing")]
    pub pixel_spacing_m: f64,
    pub geo_origin: GeoPoint,
    pub acquisition_time: DateTime<Utc>,
    #[serde(default)]
    pub sensor_params: BTreeMap<String, serde_json::Value>,
}

impl ProductRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.product_id.is_empty() {
            return Err("empty product_id".into());
        }
        if self.rows == 0 || self.cols == 0 {
            return Err("rows and cols must be positive".into());
        }
        if !(self.pixel_spacing_m > 0.0) {
            return Err("pixel_spacing_m must be positive".into());
        }
        Ok(())
    }
}

/// Where products come from: a listing plus raster access.
pub trait ProductSource: Send + Sync {
    fn list(&self) -> Result<Vec<ProductRecord>, SourceError>;
    fn fetch(&self, product: &ProductRecord) -> Result<Raster, SourceError>;
}

/// A directory of `*.json` manifests; relative `uri`s resolve against it.
#[derive(Debug, Clone)]
pub struct DirSource {
    root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, uri: &str) -> PathBuf {
        let p = Path::new(uri.strip_prefix("file://").unwrap_or(uri));
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ProductSource for DirSource {
    fn list(&self) -> Result<Vec<ProductRecord>, SourceError> {
        let entries = fs::read_dir(&self.root)
            .map_err(|e| SourceError::Unreachable(format!("{}: {e}", self.root.display())))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|path| {
                let bad = |reason: String| SourceError::Manifest { path: path.display().to_string(), reason };
                let text = fs::read_to_string(&path).map_err(|e| bad(e.to_string()))?;
                let rec: ProductRecord = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
                rec.validate().map_err(bad)?;
                Ok(rec)
            })
            .collect()
    }

    fn fetch(&self, product: &ProductRecord) -> Result<Raster, SourceError> {
        let path = self.resolve(&product.uri);
        let bytes = fs::read(&path).map_err(|e| SourceError::Corrupt {
            product_id: product.product_id.clone(),
            reason: format!("{}: {e}", path.display()),
        })?;
        let raster = decode_grd(&bytes)?;
        check_shape(product, &raster)?;
        Ok(raster)
    }
}

fn check_shape(product: &ProductRecord, raster: &Raster) -> Result<(), SourceError> {
    if raster.rows != product.rows || raster.cols != product.cols {
        return Err(SourceError::Corrupt {
            product_id: product.product_id.clone(),
            reason: format!(
                "raster is {}x{}, manifest says {}x{}",
                raster.rows, raster.cols, product.rows, product.cols
            ),
        });
    }
    Ok(())
}

/// In-memory source, mostly for tests and synthetic archives. A product
/// registered without a raster fails every fetch.
#[derive(Debug, Default)]
pub struct MemorySource {
    products: Mutex<BTreeMap<String, (ProductRecord, Option<Raster>)>>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, record: ProductRecord, raster: Option<Raster>) {
        self.products.lock().unwrap().insert(record.product_id.clone(), (record, raster));
    }
}

impl ProductSource for MemorySource {
    fn list(&self) -> Result<Vec<ProductRecord>, SourceError> {
        Ok(self.products.lock().unwrap().values().map(|(r, _)| r.clone()).collect())
    }

    fn fetch(&self, product: &ProductRecord) -> Result<Raster, SourceError> {
        let guard = self.products.lock().unwrap();
        let (_, raster) = guard
            .get(&product.product_id)
            .ok_or_else(|| SourceError::NotFound(product.product_id.clone()))?;
        let raster = raster.clone().ok_or_else(|| SourceError::Corrupt {
            product_id: product.product_id.clone(),
            reason: "raster unreadable".into(),
        })?;
        check_shape(product, &raster)?;
        Ok(raster)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Backoff {
    pub initial: Duration,
    pub max: Duration,
    pub max_attempts: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { initial: Duration::from_millis(200), max: Duration::from_secs(30), max_attempts: 6 }
    }
}

/// Remembers what it has emitted so repeated polls only surface new products.
#[derive(Debug, Default)]
pub struct Crawler {
    seen: HashSet<String>,
    /// Consecutive failed listing attempts; zero when the source is healthy.
    pub consecutive_failures: u32,
}

impl Crawler {
    pub fn new() -> Self {
        Self::default()
    }

    /// One poll cycle: products not emitted by an earlier cycle, each once.
    pub fn crawl(&mut self, source: &dyn ProductSource) -> Result<Vec<ProductRecord>, SourceError> {
        let listed = match source.list() {
            Ok(l) => l,
            Err(e) => {
                self.consecutive_failures += 1;
                return Err(e);
            }
        };
        self.consecutive_failures = 0;
        Ok(listed.into_iter().filter(|r| self.seen.insert(r.product_id.clone())).collect())
    }

    /// Retries unreachable sources with exponential backoff.
    pub fn crawl_with_retry(
        &mut self,
        source: &dyn ProductSource,
        backoff: Backoff,
    ) -> Result<Vec<ProductRecord>, SourceError> {
        let mut delay = backoff.initial;
        let mut attempt = 1;
        loop {
            match self.crawl(source) {
                Err(SourceError::Unreachable(msg)) if attempt < backoff.max_attempts => {
                    log::warn!("crawl attempt {attempt} failed: {msg}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay = (delay * 2).min(backoff.max);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
