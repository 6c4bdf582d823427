//! Tree-structured vector quantization index built from recursive 2-means.

pub mod build;
pub mod distance;
pub mod format;
pub mod kmeans;
pub mod tree;

use thiserror::Error;

use crate::store::StoreError;
use crate::vector::VectorError;

pub use build::{build_index, build_index_with, build_tree, BuildStats};
pub use distance::{distance_sq, NormMode, OpCount};
pub use format::{deserialize, read_index, serialize, write_index};
pub use kmeans::{assign_map, kmeans2, reduce_update, seed_node, KmeansParams, KmeansResult, Partial};
pub use tree::{stop_check, Assignment, Encoded, LeafReason, TsvqNode, TsvqParams, TsvqTree};

#[derive(Debug, Error)]
pub enum TsvqError {
    #[error("the archive is empty")]
    EmptyArchive,
    #[error("no points assigned to the node")]
    EmptyNode,
    #[error("all points in the node are identical")]
    Degenerate,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("index format: {0}")]
    Format(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
