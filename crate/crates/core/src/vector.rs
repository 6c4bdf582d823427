//! Sparse points and dense centroids.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sparse indices must be strictly increasing and below {dim}")]
    BadIndices { dim: usize },
    #[error("indices and values differ in length ({indices} vs {values})")]
    LengthMismatch { indices: usize, values: usize },
    #[error("non-finite component")]
    NonFinite,
}

/// Squared Euclidean norm of f32 components accumulated in f64. The same
/// routine feeds both the cached and the recomputed paths so they agree
/// bitwise.
#[inline]
pub fn norm_sq_f32(values: &[f32]) -> f64 {
    values.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

#[inline]
pub fn norm_sq_f64(values: &[f64]) -> f64 {
    values.iter().map(|&v| v * v).sum()
}

/// A sparse vector with its squared norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
    norm_sq: f64,
}

impl SparseVector {
    pub fn new(dim: usize, indices: Vec<u32>, values: Vec<f32>) -> Result<Self, VectorError> {
        if indices.len() != values.len() {
            return Err(VectorError::LengthMismatch { indices: indices.len(), values: values.len() });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i as usize >= dim) {
            return Err(VectorError::BadIndices { dim });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        let norm_sq = norm_sq_f32(&values);
        Ok(Self { dim, indices, values, norm_sq })
    }

    /// Keeps the non-zero components of a dense vector.
    pub fn from_dense(dense: &[f32]) -> Result<Self, VectorError> {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        Self::new(dense.len(), indices, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v as f64;
        }
        out
    }

    /// `self · dense` over the non-zeros of `self`.
    #[inline]
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| v as f64 * dense[i as usize])
            .sum()
    }

    /// Sparse-sparse dot product by merging the index lists.
    pub fn dot_sparse(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] as f64 * other.values[j] as f64;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Squared Euclidean distance to another sparse vector, clamped at 0.
    /// Zero for a vector and itself.
    pub fn distance_sq(&self, other: &SparseVector) -> Result<f64, VectorError> {
        if self.dim != other.dim {
            return Err(VectorError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        Ok((self.norm_sq - 2.0 * self.dot_sparse(other) + other.norm_sq).max(0.0))
    }

    /// Adds `self` into a dense accumulator.
    #[inline]
    pub fn add_into(&self, acc: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            acc[i as usize] += v as f64;
        }
    }
}

/// A dense centroid with its squared norm cached.
///
/// Tree centroids are held at f32 storage precision (see [`Centroid::quantized`]);
/// the k-means loop works on unrounded f64 centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    values: Vec<f64>,
    norm_sq: f64,
}

impl Centroid {
    pub fn from_f64(values: Vec<f64>) -> Self {
        let norm_sq = norm_sq_f64(&values);
        Self { values, norm_sq }
    }

    pub fn from_f32(values: &[f32]) -> Self {
        Self::from_f64(values.iter().map(|&v| v as f64).collect())
    }

    /// Rounds to f32 so the centroid survives serialization unchanged.
    pub fn quantized(values: &[f64]) -> Self {
        Self::from_f64(values.iter().map(|&v| v as f32 as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }
}
