//! Query-by-example over a loaded index, plus the exhaustive scan oracle.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{DescriptorMeta, GeoBounds, TileDescriptor};
use crate::ingest::extract::{extract_descriptor, ExtractError};
use crate::ingest::grd::{decode_grd, GrdError};
use crate::ingest::tiling::Tile;
use crate::ingest::IngestConfig;
use crate::store::{DescriptorStore, StoreError};
use crate::tsvq::{read_index, Assignment, TsvqError, TsvqTree};
use crate::vector::SparseVector;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("the archive is empty")]
    EmptyArchive,
    #[error("malformed tile: {0}")]
    Parse(#[from] GrdError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Index(#[from] TsvqError),
}

/// Metadata constraints. Every present field must match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryFilters {
    /// Tiles whose footprint intersects this box.
    pub bbox: Option<GeoBounds>,
    pub time_from: Option<DateTime<Utc>>,
    pub time_to: Option<DateTime<Utc>>,
    pub product_ids: Option<BTreeSet<String>>,
    /// Exact matches on sensor parameters.
    pub sensor_params: BTreeMap<String, serde_json::Value>,
}

impl QueryFilters {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn matches(&self, d: &TileDescriptor) -> bool {
        let m = &d.meta;
        self.bbox.as_ref().is_none_or(|b| b.intersects(&d.geo_bounds))
            && self.time_from.is_none_or(|t| m.acquisition_time >= t)
            && self.time_to.is_none_or(|t| m.acquisition_time <= t)
            && self.product_ids.as_ref().is_none_or(|ids| ids.contains(&m.product_id))
            && self.sensor_params.iter().all(|(k, v)| m.sensor_params.get(k) == Some(v))
    }
}

#[derive(Debug, Clone)]
pub struct QueryRequest {
    pub vector: SparseVector,
    pub top_k: usize,
    pub filters: QueryFilters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub tile_id: String,
    pub distance_sq: f64,
    pub geo_bounds: GeoBounds,
    pub metadata: DescriptorMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryStats {
    pub distance_evals: u64,
    #[serde(serialize_with = "as_millis")]
    pub elapsed: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
    /// Leaf reached by the tree search; absent for exhaustive scans.
    pub leaf_codeword: Option<String>,
    pub stats: QueryStats,
}

/// An index loaded for querying, with leaf membership lists.
#[derive(Debug, Clone)]
pub struct LoadedIndex {
    pub tree: TsvqTree,
    pub assignment: Assignment,
    members: HashMap<u64, Vec<String>>,
}

impl LoadedIndex {
    pub fn new(tree: TsvqTree, assignment: Assignment) -> Self {
        let members = assignment.members();
        Self { tree, assignment, members }
    }

    pub fn load(path: &Path) -> Result<Self, TsvqError> {
        let (tree, assignment) = read_index(path)?;
        Ok(Self::new(tree, assignment))
    }

    pub fn leaf_members(&self, leaf: u64) -> &[String] {
        self.members.get(&leaf).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn check_request(req: &QueryRequest, dim: usize) -> Result<(), QueryError> {
    if req.top_k == 0 {
        return Err(QueryError::InvalidInput("top_k must be at least 1".into()));
    }
    if req.vector.dim() != dim {
        return Err(QueryError::InvalidInput(format!(
            "descriptor dimension {} does not match index dimension {dim}",
            req.vector.dim()
        )));
    }
    Ok(())
}

/// Filters, scores and ranks candidates: ascending distance, ties by tile id.
fn rank<'a>(
    query: &SparseVector,
    candidates: impl IntoIterator<Item = &'a TileDescriptor>,
    filters: &QueryFilters,
    top_k: usize,
    evals: &mut u64,
) -> Result<Vec<Hit>, QueryError> {
    let mut scored = Vec::new();
    for d in candidates {
        if !filters.matches(d) {
            continue;
        }
        *evals += 1;
        let dist = query.distance_sq(&d.vector).map_err(|e| QueryError::InvalidInput(e.to_string()))?;
        scored.push((dist, d));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.tile_id.cmp(&b.1.tile_id)));
    scored.truncate(top_k);
    Ok(scored
        .into_iter()
        .map(|(distance_sq, d)| Hit {
            tile_id: d.tile_id.clone(),
            distance_sq,
            geo_bounds: d.geo_bounds,
            metadata: d.meta.clone(),
        })
        .collect())
}

/// Encodes the query to a leaf and ranks that leaf's members.
pub fn query(req: &QueryRequest, index: &LoadedIndex, store: &DescriptorStore) -> Result<QueryResult, QueryError> {
    let start = Instant::now();
    if index.tree.total_points == 0 {
        return Err(QueryError::EmptyArchive);
    }
    check_request(req, index.tree.dim)?;
    let enc = index.tree.encode(&req.vector)?;
    let members = index
        .leaf_members(enc.leaf)
        .iter()
        .map(|id| store.get(id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut evals = enc.ops.distance_evals;
    let hits = rank(&req.vector, &members, &req.filters, req.top_k, &mut evals)?;
    Ok(QueryResult {
        hits,
        leaf_codeword: Some(enc.codeword),
        stats: QueryStats { distance_evals: evals, elapsed: start.elapsed() },
    })
}

/// Query with the stored descriptor of an indexed tile.
pub fn query_by_tile_id(
    tile_id: &str,
    top_k: usize,
    filters: QueryFilters,
    index: &LoadedIndex,
    store: &DescriptorStore,
) -> Result<QueryResult, QueryError> {
    let d = store.get(tile_id)?;
    query(&QueryRequest { vector: d.vector, top_k, filters }, index, store)
}

/// Descriptor of an uploaded GRD tile, extracted with the ingest settings.
pub fn descriptor_from_tile(bytes: &[u8], config: &IngestConfig) -> Result<SparseVector, QueryError> {
    let raster = decode_grd(bytes)?;
    if raster.rows != config.tile_size || raster.cols != config.tile_size {
        return Err(QueryError::InvalidInput(format!(
            "tile is {}x{}, index expects {}x{}",
            raster.rows, raster.cols, config.tile_size, config.tile_size
        )));
    }
    let tile = Tile {
        tile_id: "query".into(),
        row0: 0,
        col0: 0,
        size: config.tile_size,
        geo_bounds: GeoBounds::default(),
        pixels: raster.pixels,
    };
    let meta = DescriptorMeta {
        product_id: "query".into(),
        acquisition_time: DateTime::<Utc>::UNIX_EPOCH,
        sensor_params: Default::default(),
    };
    match extract_descriptor(&tile, meta, &config.extract()) {
        Ok(d) => Ok(d.vector),
        Err(ExtractError::Polsar { source, .. }) => Err(QueryError::InvalidInput(source.to_string())),
        Err(e) => Err(QueryError::InvalidInput(e.to_string())),
    }
}

/// Extracts a descriptor from an uploaded GRD tile, then queries with it.
pub fn query_by_tile(
    bytes: &[u8],
    top_k: usize,
    filters: QueryFilters,
    config: &IngestConfig,
    index: &LoadedIndex,
    store: &DescriptorStore,
) -> Result<QueryResult, QueryError> {
    let vector = descriptor_from_tile(bytes, config)?;
    if vector.dim() != index.tree.dim {
        return Err(QueryError::InvalidInput(format!(
            "ingest bins give dimension {}, index has {}",
            vector.dim(),
            index.tree.dim
        )));
    }
    query(&QueryRequest { vector, top_k, filters }, index, store)
}

/// Exact top-k over `descriptors`, same ordering rules as [`query`].
pub fn brute_force<'a>(
    vector: &SparseVector,
    descriptors: impl IntoIterator<Item = &'a TileDescriptor>,
    top_k: usize,
    filters: &QueryFilters,
) -> Result<QueryResult, QueryError> {
    let start = Instant::now();
    if top_k == 0 {
        return Err(QueryError::InvalidInput("top_k must be at least 1".into()));
    }
    let mut evals = 0;
    let hits = rank(vector, descriptors, filters, top_k, &mut evals)?;
    Ok(QueryResult { hits, leaf_codeword: None, stats: QueryStats { distance_evals: evals, elapsed: start.elapsed() } })
}

/// Linear scan of the whole store: the evaluation oracle.
pub fn brute_force_scan(
    vector: &SparseVector,
    store: &DescriptorStore,
    top_k: usize,
    filters: &QueryFilters,
) -> Result<QueryResult, QueryError> {
    let all = store.scan()?;
    if all.is_empty() {
        return Err(QueryError::EmptyArchive);
    }
    brute_force(vector, &all, top_k, filters)
}

/// Fraction of the exact top-k that the approximate result recovered.
pub fn recall_at_k(approx: &QueryResult, exact: &QueryResult) -> f64 {
    if exact.hits.is_empty() {
        return 1.0;
    }
    let want: BTreeSet<&str> = exact.hits.iter().map(|h| h.tile_id.as_str()).collect();
    let got = approx.hits.iter().filter(|h| want.contains(h.tile_id.as_str())).count();
    got as f64 / want.len() as f64
}
