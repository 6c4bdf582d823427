//! Squared Euclidean distance between a sparse point and a dense centroid.

use serde::{Deserialize, Serialize};

use crate::vector::{norm_sq_f32, norm_sq_f64, Centroid, SparseVector, VectorError};

/// Whether squared norms come from the cache or are recomputed per call.
/// Both paths run the same summation, so results agree bitwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    #[default]
    Cached,
    Recompute,
}

/// Work done by distance evaluations. `ops` counts multiply-adds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub distance_evals: u64,
    pub ops: u64,
}

impl std::ops::AddAssign for OpCount {
    fn add_assign(&mut self, o: Self) {
        self.distance_evals += o.distance_evals;
        self.ops += o.ops;
    }
}

/// `‖x‖² − 2·x·y + ‖y‖²` with a sparse dot product over x's non-zeros,
/// clamped at 0.
pub fn distance_sq(x: &SparseVector, y: &Centroid) -> Result<f64, VectorError> {
    if x.dim() != y.dim() {
        return Err(VectorError::DimensionMismatch { expected: y.dim(), got: x.dim() });
    }
    Ok(distance_sq_unchecked(x, y, NormMode::Cached, &mut OpCount::default()))
}

#[inline]
pub(crate) fn distance_sq_unchecked(x: &SparseVector, y: &Centroid, mode: NormMode, count: &mut OpCount) -> f64 {
    let nnz = x.nnz() as u64;
    let (xx, yy) = match mode {
        NormMode::Cached => {
            count.ops += nnz + 1;
            (x.norm_sq(), y.norm_sq())
        }
        NormMode::Recompute => {
            count.ops += 2 * nnz + y.dim() as u64 + 1;
            (norm_sq_f32(x.values()), norm_sq_f64(y.values()))
        }
    };
    count.distance_evals += 1;
    let d = xx - 2.0 * x.dot_dense(y.values()) + yy;
    d.max(0.0)
}
