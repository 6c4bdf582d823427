//! The indexed unit: a normalized sparse (H, alpha, A) histogram of one tile.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::{SparseVector, VectorError};

/// Tolerance on `|Σ values − 1|` for stored descriptors. Values are kept at
/// f32 precision, whose rounding alone accounts for up to 2⁻²⁴ of total mass.
pub const L1_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DescriptorError {
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("descriptor values must be non-negative")]
    Negative,
    #[error("descriptor L1 norm is {0}, expected 1")]
    NotNormalized(f64),
}

/// Latitude/longitude bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoBounds {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl GeoBounds {
    pub fn intersects(&self, other: &GeoBounds) -> bool {
        self.min_lat <= other.max_lat
            && other.min_lat <= self.max_lat
            && self.min_lon <= other.max_lon
            && other.min_lon <= self.max_lon
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.min_lat, self.min_lon, self.max_lat, self.max_lon]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { min_lat: a[0], min_lon: a[1], max_lat: a[2], max_lon: a[3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMeta {
    pub product_id: String,
    pub acquisition_time: DateTime<Utc>,
    #[serde(default)]
    pub sensor_params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileDescriptor {
    pub tile_id: String,
    pub geo_bounds: GeoBounds,
    pub vector: SparseVector,
    pub meta: DescriptorMeta,
}

impl TileDescriptor {
    pub fn new(
        tile_id: impl Into<String>,
        geo_bounds: GeoBounds,
        vector: SparseVector,
        meta: DescriptorMeta,
    ) -> Result<Self, DescriptorError> {
        let d = Self { tile_id: tile_id.into(), geo_bounds, vector, meta };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.vector.values().iter().any(|&v| v < 0.0) {
            return Err(DescriptorError::Negative);
        }
        let l1: f64 = self.vector.values().iter().map(|&v| v as f64).sum();
        if (l1 - 1.0).abs() > L1_TOL {
            return Err(DescriptorError::NotNormalized(l1));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vector.dim()
    }

    pub fn norm_sq(&self) -> f64 {
        self.vector.norm_sq()
    }
}
