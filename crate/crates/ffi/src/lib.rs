//! C ABI over the retrieval engine.
//!
//! Every function returns a [`PolsarStatus`]; on failure the message is
//! available from [`polsar_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use num_complex::Complex64;
use polsar_cbir::polsar::{decompose, CoherencyMatrix, PolsarError};
use polsar_cbir::query::{query, query_by_tile_id, LoadedIndex, QueryError, QueryFilters, QueryRequest, QueryResult};
use polsar_cbir::store::{DescriptorStore, StoreConfig, StoreError};
use polsar_cbir::tsvq::{build_index, write_index, TsvqError, TsvqParams};
use polsar_cbir::vector::SparseVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolsarStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    NotFound = 4,
    EmptyArchive = 5,
    Unavailable = 6,
    Format = 7,
    Io = 8,
    OutOfRange = 9,
    Internal = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PolsarStatus, String);

impl Failure {
    fn null(name: &str) -> Self {
        Self(PolsarStatus::NullArgument, format!("{name} is null"))
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => PolsarStatus::NotFound,
            StoreError::Unavailable { .. } | StoreError::UnknownNode(_) => PolsarStatus::Unavailable,
            StoreError::Io(_) => PolsarStatus::Io,
            StoreError::Format(_) | StoreError::Checksum { .. } => PolsarStatus::Format,
            _ => PolsarStatus::InvalidInput,
        };
        Self(status, e.to_string())
    }
}

impl From<TsvqError> for Failure {
    fn from(e: TsvqError) -> Self {
        let status = match e {
            TsvqError::EmptyArchive => PolsarStatus::EmptyArchive,
            TsvqError::Format(_) => PolsarStatus::Format,
            TsvqError::Io(_) => PolsarStatus::Io,
            TsvqError::Store(e) => return e.into(),
            _ => PolsarStatus::InvalidInput,
        };
        Self(status, e.to_string())
    }
}

impl From<QueryError> for Failure {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::Store(e) => e.into(),
            QueryError::Index(e) => e.into(),
            QueryError::EmptyArchive => Self(PolsarStatus::EmptyArchive, e.to_string()),
            _ => Self(PolsarStatus::InvalidInput, e.to_string()),
        }
    }
}

impl From<PolsarError> for Failure {
    fn from(e: PolsarError) -> Self {
        Self(PolsarStatus::InvalidInput, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PolsarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            PolsarStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PolsarStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(PolsarStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(name))
}

fn into_handle<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn polsar_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Descriptor store handle.
pub struct PolsarStore(DescriptorStore);

/// Loaded index handle.
pub struct PolsarIndex(LoadedIndex);

/// Query result handle.
pub struct PolsarResults {
    result: QueryResult,
    tile_ids: Vec<CString>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PolsarIndexInfo {
    pub nodes: usize,
    pub leaves: usize,
    pub height: usize,
    pub dim: usize,
    pub total_points: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PolsarHit {
    /// Owned by the results handle.
    pub tile_id: *const c_char,
    pub distance_sq: f64,
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PolsarDecomposition {
    pub entropy: f64,
    /// Mean alpha angle in radians.
    pub alpha: f64,
    pub anisotropy: f64,
    pub probabilities: [f64; 3],
}

/// Opens (or creates) a store directory with the default layout.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_store_open(path: *const c_char, out: *mut *mut PolsarStore) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = into_handle(PolsarStore(DescriptorStore::open(path, StoreConfig::default())?));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`polsar_store_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn polsar_store_free(store: *mut PolsarStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_store_len(store: *const PolsarStore, out: *mut usize) -> PolsarStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(store, "store")?.0.len();
        Ok(())
    })
}

/// Builds an index over the whole store. Zero `n_min` or `h_max` keeps
/// the default.
///
/// # Safety
/// `store` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_index_build(
    store: *const PolsarStore,
    n_min: usize,
    h_max: usize,
    out: *mut *mut PolsarIndex,
) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let store = ref_arg(store, "store")?;
        let mut params = TsvqParams::default();
        if n_min > 0 {
            params.n_min = n_min;
        }
        if h_max > 0 {
            params.h_max = h_max;
        }
        let (tree, assignment) = build_index(&store.0, &params)?;
        *out = into_handle(PolsarIndex(LoadedIndex::new(tree, assignment)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_index_load(path: *const c_char, out: *mut *mut PolsarIndex) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = into_handle(PolsarIndex(LoadedIndex::load(&path)?));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn polsar_index_save(index: *const PolsarIndex, path: *const c_char) -> PolsarStatus {
    guard(|| {
        let index = &ref_arg(index, "index")?.0;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_index(&path, &index.tree, &index.assignment)?;
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_index_info(index: *const PolsarIndex, out: *mut PolsarIndexInfo) -> PolsarStatus {
    guard(|| {
        let tree = &ref_arg(index, "index")?.0.tree;
        *out_arg(out, "out")? = PolsarIndexInfo {
            nodes: tree.nodes.len(),
            leaves: tree.leaf_count(),
            height: tree.height(),
            dim: tree.dim,
            total_points: tree.total_points,
        };
        Ok(())
    })
}

/// # Safety
/// `index` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn polsar_index_free(index: *mut PolsarIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

fn wrap_results(result: QueryResult) -> *mut PolsarResults {
    let tile_ids = result.hits.iter().map(|h| CString::new(h.tile_id.as_str()).unwrap_or_default()).collect();
    into_handle(PolsarResults { result, tile_ids })
}

/// Query with the stored descriptor of `tile_id`.
///
/// # Safety
/// Handles must be live; `tile_id` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_query_tile_id(
    index: *const PolsarIndex,
    store: *const PolsarStore,
    tile_id: *const c_char,
    top_k: usize,
    out: *mut *mut PolsarResults,
) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (index, store) = (&ref_arg(index, "index")?.0, &ref_arg(store, "store")?.0);
        let result = query_by_tile_id(str_arg(tile_id, "tile_id")?, top_k, QueryFilters::default(), index, store)?;
        *out = wrap_results(result);
        Ok(())
    })
}

/// Query with a sparse descriptor given as `nnz` strictly increasing bin
/// indices and their values.
///
/// # Safety
/// Handles must be live; `indices` and `values` must hold `nnz` elements.
#[no_mangle]
pub unsafe extern "C" fn polsar_query_vector(
    index: *const PolsarIndex,
    store: *const PolsarStore,
    dim: usize,
    indices: *const u32,
    values: *const f32,
    nnz: usize,
    top_k: usize,
    out: *mut *mut PolsarResults,
) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (index, store) = (&ref_arg(index, "index")?.0, &ref_arg(store, "store")?.0);
        let (idx, vals) = if nnz == 0 {
            (Vec::new(), Vec::new())
        } else {
            if indices.is_null() || values.is_null() {
                return Err(Failure::null("indices or values"));
            }
            (std::slice::from_raw_parts(indices, nnz).to_vec(), std::slice::from_raw_parts(values, nnz).to_vec())
        };
        let vector =
            SparseVector::new(dim, idx, vals).map_err(|e| Failure(PolsarStatus::InvalidInput, e.to_string()))?;
        let req = QueryRequest { vector, top_k, filters: QueryFilters::default() };
        *out = wrap_results(query(&req, index, store)?);
        Ok(())
    })
}

/// # Safety
/// `results` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_results_len(results: *const PolsarResults, out: *mut usize) -> PolsarStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(results, "results")?.result.hits.len();
        Ok(())
    })
}

/// Distance evaluations spent by the query.
///
/// # Safety
/// `results` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_results_distance_evals(results: *const PolsarResults, out: *mut u64) -> PolsarStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(results, "results")?.result.stats.distance_evals;
        Ok(())
    })
}

/// Hit `i` in rank order. The tile id pointer lives as long as `results`.
///
/// # Safety
/// `results` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_results_get(
    results: *const PolsarResults,
    i: usize,
    out: *mut PolsarHit,
) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = ref_arg(results, "results")?;
        let hit = r.result.hits.get(i).ok_or_else(|| {
            Failure(PolsarStatus::OutOfRange, format!("hit {i} out of range ({} hits)", r.result.hits.len()))
        })?;
        let g = hit.geo_bounds;
        *out = PolsarHit {
            tile_id: r.tile_ids[i].as_ptr(),
            distance_sq: hit.distance_sq,
            min_lat: g.min_lat,
            min_lon: g.min_lon,
            max_lat: g.max_lat,
            max_lon: g.max_lon,
        };
        Ok(())
    })
}

/// # Safety
/// `results` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn polsar_results_free(results: *mut PolsarResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// H/alpha/A of a 3x3 coherency matrix given row-major as 9 complex
/// entries, interleaved real and imaginary parts (18 doubles).
///
/// # Safety
/// `matrix` must hold 18 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn polsar_decompose(matrix: *const f64, out: *mut PolsarDecomposition) -> PolsarStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if matrix.is_null() {
            return Err(Failure::null("matrix"));
        }
        let m = std::slice::from_raw_parts(matrix, 18);
        let mut t = CoherencyMatrix::zero();
        for (k, pair) in m.chunks_exact(2).enumerate() {
            t.0[k / 3][k % 3] = Complex64::new(pair[0], pair[1]);
        }
        let d = decompose(&t)?;
        *out = PolsarDecomposition { entropy: d.h, alpha: d.alpha_bar, anisotropy: d.a, probabilities: d.p };
        Ok(())
    })
}
