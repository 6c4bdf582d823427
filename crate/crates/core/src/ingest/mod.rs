//! Product discovery, task queue, tiling, descriptor extraction and workers.

pub mod config;
pub mod extract;
pub mod grd;
pub mod product;
pub mod queue;
pub mod tiling;
pub mod worker;

pub use config::IngestConfig;
pub use extract::{extract_descriptor, histogram, Bins, ExtractConfig, ExtractError};
pub use grd::{decode_grd, encode_grd, read_grd, write_grd, Raster};
pub use product::{Crawler, DirSource, GeoPoint, MemorySource, ProductRecord, ProductSource, SourceError};
pub use queue::{scaling_policy, IngestTask, QueueError, ScalingConfig, TaskQueue, TaskState};
pub use tiling::{tile_product, Tile};
pub use worker::{ingest_all, run_pool, IngestSummary, KillSwitch, PoolOptions};
