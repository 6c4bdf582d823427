//! Tile → (H, alpha-bar, A) histogram descriptor.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tiling::Tile;
use crate::descriptor::{DescriptorError, DescriptorMeta, TileDescriptor};
use crate::polsar::{decompose, multilook, HAlphaA, PolsarError};
use crate::vector::SparseVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error("tile {0} has no non-degenerate multilook cell")]
    EmptyTile(String),
    #[error("tile {tile_id}: {source}")]
    Polsar { tile_id: String, source: PolsarError },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error("invalid extraction config: {0}")]
    Config(String),
}

/// Histogram resolution along H, alpha-bar and A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bins {
    pub h: usize,
    pub alpha: usize,
    pub a: usize,
}

impl Default for Bins {
    fn default() -> Self {
        Self { h: 8, alpha: 8, a: 8 }
    }
}

impl Bins {
    pub fn dim(&self) -> usize {
        self.h * self.alpha * self.a
    }

    fn bin(value: f64, upper: f64, n: usize) -> usize {
        let i = (value / upper * n as f64).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(n - 1)
        }
    }

    /// Flat index `(ih · Bα + iα) · Ba + ia`; the upper edge of each range
    /// falls into the last bin.
    pub fn index(&self, r: &HAlphaA) -> u32 {
        let ih = Self::bin(r.h, 1.0, self.h);
        let ialpha = Self::bin(r.alpha_bar, FRAC_PI_2, self.alpha);
        let ia = Self::bin(r.a, 1.0, self.a);
        ((ih * self.alpha + ialpha) * self.a + ia) as u32
    }

    /// Inverse of [`Bins::index`].
    pub fn unflatten(&self, index: u32) -> (usize, usize, usize) {
        let i = index as usize;
        let ia = i % self.a;
        let ialpha = (i / self.a) % self.alpha;
        let ih = i / (self.a * self.alpha);
        (ih, ialpha, ia)
    }
}

impl fmt::Display for Bins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.h, self.alpha, self.a)
    }
}

impl FromStr for Bins {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad bin count {p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [h, alpha, a] if h > 0 && alpha > 0 && a > 0 => Ok(Self { h, alpha, a }),
            _ => Err(format!("expected three positive bin counts, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub bins: Bins,
    pub multilook_window: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { bins: Bins::default(), multilook_window: 3 }
    }
}

/// Raw bin counts over the multilook cells of one tile.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Histogram {
    pub counts: BTreeMap<u32, u64>,
    /// Non-degenerate cells; equals the sum of `counts`.
    pub cells: u64,
    pub degenerate: u64,
}

impl Histogram {
    /// L1-normalized `(index, value)` pairs in f64.
    pub fn normalized(&self) -> Vec<(u32, f64)> {
        let total = self.cells as f64;
        self.counts.iter().map(|(&i, &c)| (i, c as f64 / total)).collect()
    }
}

pub fn histogram(tile: &Tile, config: &ExtractConfig) -> Result<Histogram, ExtractError> {
    if config.multilook_window == 0 {
        return Err(ExtractError::Config("multilook window must be positive".into()));
    }
    let wrap = |source| ExtractError::Polsar { tile_id: tile.tile_id.clone(), source };
    let (cells, _, _) = multilook(&tile.pixels, tile.size, tile.size, config.multilook_window).map_err(wrap)?;
    let mut hist = Histogram::default();
    for t in &cells {
        match decompose(t) {
            Ok(r) => {
                *hist.counts.entry(config.bins.index(&r)).or_insert(0) += 1;
                hist.cells += 1;
            }
            Err(PolsarError::DegeneratePixel) => hist.degenerate += 1,
            Err(e) => return Err(wrap(e)),
        }
    }
    Ok(hist)
}

pub fn extract_descriptor(
    tile: &Tile,
    meta: DescriptorMeta,
    config: &ExtractConfig,
) -> Result<TileDescriptor, ExtractError> {
    let hist = histogram(tile, config)?;
    if hist.cells == 0 {
        return Err(ExtractError::EmptyTile(tile.tile_id.clone()));
    }
    let (indices, values): (Vec<u32>, Vec<f32>) =
        hist.normalized().into_iter().map(|(i, v)| (i, v as f32)).unzip();
    let vector = SparseVector::new(config.bins.dim(), indices, values).map_err(DescriptorError::from)?;
    Ok(TileDescriptor::new(tile.tile_id.clone(), tile.geo_bounds, vector, meta)?)
}
