//! HTTP API: query-by-example, tile quicklooks and archive status.

pub mod quicklook;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::ingest::config::{load_sources, load_store_config, STORE_QUEUE_FILE};
use crate::ingest::queue::{QueueStats, TaskQueue};
use crate::ingest::tiling::parse_tile_id;
use crate::ingest::{DirSource, IngestConfig, ProductRecord, ProductSource};
use crate::polsar::ScatteringPixel;
use crate::query::{query_by_tile, query_by_tile_id, Hit, LoadedIndex, QueryError, QueryFilters, QueryResult, QueryStats};
use crate::store::{DescriptorStore, StoreConfig, StoreError};
use crate::tsvq::TsvqError;

const MAX_UPLOAD: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store: PathBuf,
    pub index: Option<PathBuf>,
    pub listen: SocketAddr,
    pub static_dir: Option<PathBuf>,
    /// Overrides the settings recorded in the store.
    pub ingest: Option<IngestConfig>,
}

struct Shared {
    store: Arc<DescriptorStore>,
    index: Option<Arc<LoadedIndex>>,
    ingest: IngestConfig,
    queue_journal: Option<PathBuf>,
    sources: Vec<DirSource>,
    /// Product id to (source position, manifest).
    products: HashMap<String, (usize, ProductRecord)>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Fails if the index dimension disagrees with the stored descriptors
    /// or with the ingest histogram bins.
    pub fn new(
        store: Arc<DescriptorStore>,
        index: Option<LoadedIndex>,
        ingest: IngestConfig,
        queue_journal: Option<PathBuf>,
    ) -> anyhow::Result<Self> {
        Self::with_sources(store, index, ingest, queue_journal, &[])
    }

    /// Like [`AppState::new`], with manifest directories that may still
    /// hold the raw products for Pauli quicklooks.
    pub fn with_sources(
        store: Arc<DescriptorStore>,
        index: Option<LoadedIndex>,
        ingest: IngestConfig,
        queue_journal: Option<PathBuf>,
        source_dirs: &[PathBuf],
    ) -> anyhow::Result<Self> {
        if let Some(idx) = &index {
            let dim = idx.tree.dim;
            if ingest.bins.dim() != dim {
                anyhow::bail!("index dimension {dim} does not match ingest bins {} ({})", ingest.bins, ingest.bins.dim());
            }
            if let Some(tile) = idx.assignment.leaves.keys().next() {
                let d = store.get(tile)?;
                if d.dim() != dim {
                    anyhow::bail!("index dimension {dim} does not match stored descriptors ({})", d.dim());
                }
            }
        }
        let sources: Vec<DirSource> = source_dirs.iter().map(DirSource::new).collect();
        let mut products = HashMap::new();
        for (pos, src) in sources.iter().enumerate() {
            match src.list() {
                Ok(records) => {
                    for r in records {
                        products.entry(r.product_id.clone()).or_insert((pos, r));
                    }
                }
                Err(e) => log::warn!("source {}: {e}", src.root().display()),
            }
        }
        Ok(Self(Arc::new(Shared { store, index: index.map(Arc::new), ingest, queue_journal, sources, products })))
    }

    /// Raw pixels of a stored tile, if its product is still readable.
    fn raw_tile(&self, tile_id: &str) -> Option<Vec<ScatteringPixel>> {
        let (product_id, row0, col0) = parse_tile_id(tile_id)?;
        let (pos, record) = self.0.products.get(product_id)?;
        let size = self.0.ingest.tile_size;
        if row0 + size > record.rows || col0 + size > record.cols {
            return None;
        }
        match self.0.sources[*pos].fetch(record) {
            Ok(raster) => Some(raster.window(row0, col0, size)),
            Err(e) => {
                log::debug!("raw quicklook for {tile_id} unavailable: {e}");
                None
            }
        }
    }

    pub fn load(cfg: &ServiceConfig) -> anyhow::Result<Self> {
        let store = Arc::new(DescriptorStore::open(&cfg.store, StoreConfig::default())?);
        let ingest = match cfg.ingest {
            Some(i) => i,
            None => load_store_config(&cfg.store)?.unwrap_or_default(),
        };
        let index = match &cfg.index {
            Some(p) if p.exists() => Some(LoadedIndex::load(p)?),
            Some(p) => {
                log::warn!("index {} not found; queries will return 503", p.display());
                None
            }
            None => None,
        };
        let sources = load_sources(&cfg.store)?;
        Self::with_sources(store, index, ingest, Some(cfg.store.join(STORE_QUEUE_FILE)), &sources)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let msg = e.to_string();
        match e {
            QueryError::InvalidInput(_) | QueryError::Index(TsvqError::InvalidInput(_)) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", msg)
            }
            QueryError::Parse(_) => Self::bad_request(msg),
            QueryError::Store(StoreError::NotFound(_)) => Self::new(StatusCode::NOT_FOUND, "not_found", msg),
            QueryError::EmptyArchive => Self::new(StatusCode::SERVICE_UNAVAILABLE, "empty_archive", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

pub fn quicklook_url(tile_id: &str) -> String {
    format!("/api/tiles/{}/quicklook", utf8_percent_encode(tile_id, NON_ALPHANUMERIC))
}

#[derive(Debug, Serialize)]
pub struct ApiHit {
    #[serde(flatten)]
    pub hit: Hit,
    pub quicklook_url: String,
}

#[derive(Debug, Serialize)]
pub struct ApiQueryResult {
    pub hits: Vec<ApiHit>,
    pub leaf_codeword: Option<String>,
    pub stats: QueryStats,
}

impl From<QueryResult> for ApiQueryResult {
    fn from(r: QueryResult) -> Self {
        Self {
            hits: r
                .hits
                .into_iter()
                .map(|hit| ApiHit { quicklook_url: quicklook_url(&hit.tile_id), hit })
                .collect(),
            leaf_codeword: r.leaf_codeword,
            stats: r.stats,
        }
    }
}

fn default_top_k() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonQuery {
    tile_id: String,
    #[serde(default = "default_top_k")]
    top_k: usize,
    #[serde(default)]
    filters: QueryFilters,
}

enum Example {
    TileId(String),
    Upload(Bytes),
}

async fn read_multipart(req: Request, state: &AppState) -> Result<(Example, usize, QueryFilters), ApiError> {
    let mut mp = Multipart::from_request(req, state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let (mut example, mut top_k, mut filters) = (None, default_top_k(), QueryFilters::default());
    while let Some(field) = mp.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        let text = || String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request(format!("{name} is not UTF-8")));
        match name.as_str() {
            "tile" => example = Some(Example::Upload(bytes.clone())),
            "tile_id" => example = Some(Example::TileId(text()?.trim().to_string())),
            "top_k" => top_k = text()?.trim().parse().map_err(|_| ApiError::bad_request("top_k must be an integer"))?,
            "filters" => {
                filters = serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("filters: {e}")))?
            }
            other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
        }
    }
    let example = example.ok_or_else(|| ApiError::bad_request("missing tile or tile_id field"))?;
    Ok((example, top_k, filters))
}

async fn post_query(State(state): State<AppState>, req: Request) -> Result<Json<ApiQueryResult>, ApiError> {
    let Some(index) = state.0.index.clone() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index_unavailable", "no index loaded"));
    };
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_ascii_lowercase();
    let (example, top_k, filters) = if content_type.starts_with("multipart/form-data") {
        read_multipart(req, &state).await?
    } else if content_type.starts_with("application/json") {
        let Json(body) = Json::<JsonQuery>::from_request(req, &state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        (Example::TileId(body.tile_id), body.top_k, body.filters)
    } else {
        return Err(ApiError::bad_request("expected application/json or multipart/form-data"));
    };

    let shared = state.0.clone();
    let result = tokio::task::spawn_blocking(move || match example {
        Example::TileId(id) => query_by_tile_id(&id, top_k, filters, &index, &shared.store),
        Example::Upload(bytes) => query_by_tile(&bytes, top_k, filters, &shared.ingest, &index, &shared.store),
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(result.into()))
}

async fn get_quicklook(State(state): State<AppState>, UrlPath(tile_id): UrlPath<String>) -> Result<Response, ApiError> {
    tokio::task::spawn_blocking(move || quicklook(&state, &tile_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn quicklook(state: &AppState, tile_id: &str) -> Result<Response, ApiError> {
    let d = match state.0.store.get(tile_id) {
        Ok(d) => d,
        Err(StoreError::NotFound(_)) => {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown tile {tile_id}")))
        }
        Err(e) => return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", e.to_string())),
    };
    let png = |bytes: Vec<u8>| ([(header::CONTENT_TYPE, "image/png")], bytes).into_response();
    if let Some(pixels) = state.raw_tile(tile_id) {
        return Ok(png(quicklook::pauli_png(&pixels, state.0.ingest.tile_size)));
    }
    let bins = state.0.ingest.bins;
    if bins.dim() != d.dim() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_input", "descriptor does not match bins"));
    }
    Ok(png(quicklook::png(&d, &bins)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStatus {
    pub nodes: usize,
    pub leaves: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStatus {
    pub pending: usize,
    pub leased: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub products: usize,
    pub tiles: usize,
    pub index: IndexStatus,
    pub queue: QueueStatus,
}

pub fn status(state: &AppState) -> Status {
    let s = &state.0;
    let products = s.store.product_count().unwrap_or_else(|e| {
        log::warn!("status: {e}");
        0
    });
    let index = s.index.as_ref().map_or_else(IndexStatus::default, |i| IndexStatus {
        nodes: i.tree.nodes.len(),
        leaves: i.tree.leaf_count(),
        height: i.tree.height(),
    });
    let q = match &s.queue_journal {
        Some(p) if p.exists() => TaskQueue::snapshot(p).unwrap_or_else(|e| {
            log::warn!("status: queue journal: {e}");
            QueueStats::default()
        }),
        _ => QueueStats::default(),
    };
    Status {
        products,
        tiles: s.store.len(),
        index,
        queue: QueueStatus { pending: q.pending, leased: q.leased, failed: q.failed },
    }
}

async fn get_status(State(state): State<AppState>) -> Json<Status> {
    Json(tokio::task::spawn_blocking(move || status(&state)).await.unwrap_or_default())
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/query", post(post_query))
        .route("/api/tiles/{tile_id}/quicklook", get(get_quicklook))
        .route("/api/status", get(get_status))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::load(&cfg)?;
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(cfg.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
