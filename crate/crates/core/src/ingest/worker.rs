//! Ingestion workers: dequeue, fetch, tile, extract, store, complete.

use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::config::IngestConfig;
use super::extract::{extract_descriptor, ExtractError};
use super::product::{Crawler, ProductSource, SourceError};
use super::queue::{IngestTask, Lease, QueueError, TaskQueue, TaskState};
use super::tiling::{tile_product, TilingError};
use crate::descriptor::DescriptorMeta;
use crate::store::{DescriptorStore, StoreError};

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Deliberate worker death for fault-injection runs: the chosen worker
/// stores `after_tiles` tiles of its first task, then stops without
/// completing or failing it.
#[derive(Debug, Clone, Copy)]
pub struct KillSwitch {
    pub worker: usize,
    pub after_tiles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Leased,
    Completed,
    Failed,
    Killed,
}

#[derive(Debug, Clone)]
pub struct WorkerEvent {
    pub worker: usize,
    pub task_id: String,
    pub attempt: u32,
    pub kind: EventKind,
    pub at: Instant,
}

/// Shared, append-only record of what the workers did.
#[derive(Debug, Default, Clone)]
pub struct EventLog(Arc<Mutex<Vec<WorkerEvent>>>);

impl EventLog {
    fn push(&self, worker: usize, lease: &Lease, kind: EventKind) {
        self.0.lock().unwrap().push(WorkerEvent {
            worker,
            task_id: lease.task.task_id.clone(),
            attempt: lease.task.attempts,
            kind,
            at: Instant::now(),
        });
    }

    pub fn events(&self) -> Vec<WorkerEvent> {
        self.0.lock().unwrap().clone()
    }
}

pub struct Worker<'a> {
    pub id: usize,
    pub queue: &'a TaskQueue,
    pub source: &'a dyn ProductSource,
    pub store: &'a DescriptorStore,
    pub config: IngestConfig,
    pub events: EventLog,
    pub kill: Option<KillSwitch>,
    /// Sleep between polls while other workers hold leases.
    pub poll_interval: Duration,
}

enum Outcome {
    Done(usize),
    Killed,
}

impl Worker<'_> {
    /// Runs until the queue is drained or `stop` is raised. Returns the number
    /// of tasks this worker completed.
    pub fn run(&self, stop: &AtomicBool) -> usize {
        let mut completed = 0;
        while !stop.load(Ordering::Relaxed) {
            let lease = match self.queue.dequeue(self.config.visibility_timeout()) {
                Ok(Some(l)) => l,
                Ok(None) if self.queue.is_drained() => break,
                Ok(None) => {
                    thread::sleep(self.poll_interval);
                    continue;
                }
                Err(e) => {
                    log::error!("worker {}: dequeue: {e}", self.id);
                    thread::sleep(self.poll_interval);
                    continue;
                }
            };
            self.events.push(self.id, &lease, EventKind::Leased);
            match self.process(&lease) {
                Ok(Outcome::Killed) => {
                    self.events.push(self.id, &lease, EventKind::Killed);
                    log::warn!("worker {} killed while holding {}", self.id, lease.task.task_id);
                    return completed;
                }
                Ok(Outcome::Done(tiles)) => match self.queue.complete(&lease.receipt) {
                    Ok(()) => {
                        completed += 1;
                        self.events.push(self.id, &lease, EventKind::Completed);
                        log::info!("{}: {tiles} tiles", lease.task.task_id);
                    }
                    Err(QueueError::StaleReceipt) => {
                        log::warn!("{}: lease lost before completion", lease.task.task_id)
                    }
                    Err(e) => log::error!("{}: complete: {e}", lease.task.task_id),
                },
                Err(e) => {
                    log::warn!("{} attempt {}: {e}", lease.task.task_id, lease.task.attempts);
                    match self.queue.fail(&lease.receipt, &e.to_string()) {
                        Ok(TaskState::Failed) => self.events.push(self.id, &lease, EventKind::Failed),
                        Ok(_) => {}
                        Err(e) => log::warn!("{}: fail: {e}", lease.task.task_id),
                    }
                }
            }
        }
        completed
    }

    fn process(&self, lease: &Lease) -> Result<Outcome, ProcessError> {
        let task = &lease.task;
        let raster = self.source.fetch(&task.product)?;
        let meta = DescriptorMeta {
            product_id: task.product.product_id.clone(),
            acquisition_time: task.product.acquisition_time,
            sensor_params: task.product.sensor_params.clone(),
        };
        let extract = self.config.extract();
        let timeout = self.config.visibility_timeout();
        let mut last_beat = Instant::now();
        let mut stored = 0;
        for tile in tile_product(&task.product, &raster, self.config.tile_size, self.config.overlap)? {
            if let Some(k) = self.kill {
                if k.worker == self.id && stored >= k.after_tiles {
                    return Ok(Outcome::Killed);
                }
            }
            match extract_descriptor(&tile, meta.clone(), &extract) {
                Ok(d) => {
                    self.store.put(&d)?;
                    stored += 1;
                }
                Err(ExtractError::EmptyTile(id)) => log::warn!("skipping empty tile {id}"),
                Err(e) => return Err(e.into()),
            }
            if last_beat.elapsed() >= timeout / 3 {
                if let Err(e) = self.queue.extend(&lease.receipt, timeout) {
                    log::warn!("{}: heartbeat: {e}", task.task_id);
                }
                last_beat = Instant::now();
            }
        }
        Ok(Outcome::Done(stored))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub products: usize,
    pub tiles: usize,
    pub failed: usize,
}

#[derive(Default)]
pub struct PoolOptions {
    pub workers: Option<usize>,
    pub kill: Option<KillSwitch>,
    pub events: EventLog,
    pub poll_interval: Option<Duration>,
}

/// Runs a worker pool over the queue until it drains. The pool size comes
/// from the scaling policy unless `workers` pins it.
pub fn run_pool(
    queue: &TaskQueue,
    source: &dyn ProductSource,
    store: &DescriptorStore,
    config: &IngestConfig,
    options: &PoolOptions,
) -> usize {
    let stats = queue.stats();
    let size = options
        .workers
        .unwrap_or_else(|| super::queue::scaling_policy(stats.pending, 0, &config.scaling()))
        .max(1);
    let stop = AtomicBool::new(false);
    let poll = options.poll_interval.unwrap_or(Duration::from_millis(50));
    thread::scope(|s| {
        let handles: Vec<_> = (0..size)
            .map(|id| {
                let worker = Worker {
                    id,
                    queue,
                    source,
                    store,
                    config: *config,
                    events: options.events.clone(),
                    kill: options.kill,
                    poll_interval: poll,
                };
                let stop = &stop;
                s.spawn(move || worker.run(stop))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(0)).sum()
    })
}

/// Crawl, enqueue every new product, drain the queue, and summarize.
pub fn ingest_all(
    source: &dyn ProductSource,
    queue: &TaskQueue,
    store: &DescriptorStore,
    config: &IngestConfig,
    options: &PoolOptions,
) -> Result<IngestSummary, SourceError> {
    let products = Crawler::new().crawl(source)?;
    for p in &products {
        match queue.enqueue(IngestTask::for_product(p.clone())) {
            Ok(()) => {}
            Err(QueueError::AlreadyDone(id)) => log::info!("{id} already ingested"),
            Err(QueueError::Duplicate(id)) => log::info!("{id} already queued"),
            Err(e) => log::error!("enqueue {}: {e}", p.product_id),
        }
    }
    run_pool(queue, source, store, config, options);
    if let Err(e) = store.flush() {
        log::error!("flushing store: {e}");
    }

    let wanted: HashSet<&str> = products.iter().map(|p| p.product_id.as_str()).collect();
    let mut per_product: BTreeMap<String, usize> = BTreeMap::new();
    match store.scan() {
        Ok(all) => {
            for d in all {
                if wanted.contains(d.meta.product_id.as_str()) {
                    *per_product.entry(d.meta.product_id).or_default() += 1;
                }
            }
        }
        Err(e) => log::error!("counting stored tiles: {e}"),
    }
    let failed = queue
        .tasks()
        .iter()
        .filter(|t| t.state == TaskState::Failed && wanted.contains(t.task_id.as_str()))
        .count();
    Ok(IngestSummary { products: products.len(), tiles: per_product.values().sum(), failed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::grd::Raster;
    use crate::ingest::product::{GeoPoint, MemorySource, ProductRecord};
    use crate::polsar::{synth_product, ScattererClass};
    use crate::store::StoreConfig;

    fn config() -> IngestConfig {
        IngestConfig { tile_size: 16, visibility_timeout_s: 0.3, ..Default::default() }
    }

    fn product(id: &str, seed: u64) -> (ProductRecord, Raster) {
        let rec = ProductRecord {
            product_id: id.into(),
            uri: format!("{id}.grd"),
            rows: 32,
            cols: 48,
            pixel_spacing_m: 6.0,
            geo_origin: GeoPoint { lat: 10.0, lon: 20.0 },
            acquisition_time: "2015-01-01T00:00:00Z".parse().unwrap(),
            sensor_params: Default::default(),
        };
        let pixels = synth_product(&vec![ScattererClass::Volume; 32 * 48], seed);
        (rec, Raster::new(32, 48, pixels))
    }

    fn store(dir: &std::path::Path) -> DescriptorStore {
        DescriptorStore::open(dir, StoreConfig { chunk_size: 16 << 10, ..Default::default() }).unwrap()
    }

    #[test]
    fn five_products_one_worker() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let src = MemorySource::new();
        for i in 0..5 {
            let (r, raster) = product(&format!("p{i}"), i);
            src.insert(r, Some(raster));
        }
        let q = TaskQueue::in_memory(3);
        let opts = PoolOptions { workers: Some(1), ..Default::default() };
        let summary = ingest_all(&src, &q, &s, &config(), &opts).unwrap();
        assert_eq!(summary, IngestSummary { products: 5, tiles: 30, failed: 0 });
        assert_eq!(s.len(), 30);
        assert!(s.contains("p4/16/32"));
    }

    #[test]
    fn corrupt_product_fails_after_three_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let src = MemorySource::new();
        let (good, raster) = product("good", 1);
        src.insert(good, Some(raster));
        let (bad, _) = product("bad", 2);
        src.insert(bad, None);
        let q = TaskQueue::in_memory(3);
        let opts = PoolOptions { workers: Some(2), ..Default::default() };
        let summary = ingest_all(&src, &q, &s, &config(), &opts).unwrap();
        assert_eq!(summary.failed, 1);
        assert_eq!(summary.tiles, 6);
        let task = q.get("bad").unwrap();
        assert_eq!((task.state, task.attempts), (TaskState::Failed, 3));
        assert!(task.failure_reason.unwrap().contains("unreadable"));
        assert_eq!(q.get("good").unwrap().state, TaskState::Done);
    }

    #[test]
    fn killed_worker_task_is_redelivered() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let src = MemorySource::new();
        for i in 0..3 {
            let (r, raster) = product(&format!("p{i}"), i);
            src.insert(r, Some(raster));
        }
        let q = TaskQueue::in_memory(3);
        let opts = PoolOptions {
            workers: Some(2),
            kill: Some(KillSwitch { worker: 0, after_tiles: 2 }),
            poll_interval: Some(Duration::from_millis(10)),
            ..Default::default()
        };
        let summary = ingest_all(&src, &q, &s, &config(), &opts).unwrap();
        assert_eq!(summary, IngestSummary { products: 3, tiles: 18, failed: 0 });
        let events = opts.events.events();
        let killed = events.iter().find(|e| e.kind == EventKind::Killed).unwrap();
        assert!(events
            .iter()
            .any(|e| e.task_id == killed.task_id && e.kind == EventKind::Completed && e.attempt == 2));
    }

    #[test]
    fn rerun_adds_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let src = MemorySource::new();
        let (r, raster) = product("p", 3);
        src.insert(r, Some(raster));
        let cfg = config();
        ingest_all(&src, &TaskQueue::in_memory(3), &s, &cfg, &PoolOptions::default()).unwrap();
        let again = ingest_all(&src, &TaskQueue::in_memory(3), &s, &cfg, &PoolOptions::default()).unwrap();
        assert_eq!(again.tiles, 6);
        assert_eq!(s.len(), 6);
    }
}
