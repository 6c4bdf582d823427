//! Index build benchmark across worker counts.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::descriptor::TileDescriptor;
use crate::query::{brute_force, query, recall_at_k, LoadedIndex, QueryError, QueryFilters, QueryRequest};
use crate::store::DescriptorStore;
use crate::tsvq::{build_tree, serialize, Assignment, NormMode, TsvqError, TsvqParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub workers: usize,
    pub median_s: f64,
    pub speedup: f64,
    /// CRC32 of the serialized index.
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub points: usize,
    pub nodes: usize,
    pub leaves: usize,
    pub recall_at_10: Option<f64>,
    pub recall_queries: usize,
}

impl BenchReport {
    pub fn checksums_match(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].checksum == w[1].checksum)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("workers,median_s,speedup\n");
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.3}", r.workers, r.median_s, r.speedup).unwrap();
        }
        out
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Builds the index `repeat` times per worker count and records the median
/// wall time. Speedups are relative to the first worker count.
pub fn bench_build(
    descriptors: &[TileDescriptor],
    params: &TsvqParams,
    workers: &[usize],
    repeat: usize,
) -> Result<(Vec<BenchRow>, LoadedIndex), TsvqError> {
    let points: Vec<_> = descriptors.iter().map(|d| d.vector.clone()).collect();
    let mut rows = Vec::new();
    let mut first = None;
    for &w in workers {
        let p = TsvqParams { num_partitions: w, ..*params };
        let mut times = Vec::new();
        let mut built = None;
        for _ in 0..repeat.max(1) {
            let start = Instant::now();
            let b = build_tree(&points, &p, NormMode::Cached)?;
            times.push(start.elapsed().as_secs_f64());
            built = Some(b);
        }
        let (tree, leaf_of, _) = built.unwrap();
        let assignment =
            Assignment { leaves: descriptors.iter().map(|d| d.tile_id.clone()).zip(leaf_of).collect() };
        let checksum = crc32fast::hash(&serialize(&tree, &assignment));
        rows.push(BenchRow { workers: w, median_s: median(&mut times), speedup: 1.0, checksum });
        if first.is_none() {
            first = Some(LoadedIndex::new(tree, assignment));
        }
    }
    let base = rows.first().map(|r| r.median_s).unwrap_or(1.0);
    for r in &mut rows {
        r.speedup = base / r.median_s;
    }
    Ok((rows, first.ok_or(TsvqError::EmptyArchive)?))
}

/// Mean recall@k of tree queries against the exhaustive scan, using every
/// `n / queries`-th stored tile as a query.
pub fn measure_recall(
    index: &LoadedIndex,
    store: &DescriptorStore,
    all: &[TileDescriptor],
    queries: usize,
    top_k: usize,
) -> Result<f64, QueryError> {
    if all.is_empty() || queries == 0 {
        return Ok(1.0);
    }
    let step = (all.len() / queries).max(1);
    let mut total = 0.0;
    let mut n = 0;
    for d in all.iter().step_by(step).take(queries) {
        let req = QueryRequest { vector: d.vector.clone(), top_k, filters: QueryFilters::default() };
        let approx = query(&req, index, store)?;
        let exact = brute_force(&d.vector, all, top_k, &QueryFilters::default())?;
        total += recall_at_k(&approx, &exact);
        n += 1;
    }
    Ok(total / n as f64)
}

/// Full benchmark over a store: build timings per worker count plus recall.
pub fn run_bench(
    store: &DescriptorStore,
    params: &TsvqParams,
    workers: &[usize],
    repeat: usize,
    recall_queries: usize,
) -> anyhow::Result<BenchReport> {
    let all = store.scan()?;
    if all.is_empty() {
        return Err(TsvqError::EmptyArchive.into());
    }
    let (rows, index) = bench_build(&all, params, workers, repeat)?;
    let recall = if recall_queries > 0 { Some(measure_recall(&index, store, &all, recall_queries, 10)?) } else { None };
    Ok(BenchReport {
        rows,
        points: all.len(),
        nodes: index.tree.nodes.len(),
        leaves: index.tree.leaf_count(),
        recall_at_10: recall,
        recall_queries,
    })
}
