//! Chunked, replicated descriptor store simulating a small distributed file
//! system on one machine.
//!
//! Descriptors are appended to an open chunk. When the next record would
//! push the chunk past `chunk_size`, the chunk is sealed: a CRC32/record
//! count trailer is added and the file is written to `replication` distinct
//! live nodes chosen by rendezvous hashing of the chunk id. Each node is a
//! directory under the store root; placements are journaled as JSON lines.
//!
//! Records in the open chunk live in memory only until [`DescriptorStore::flush`].

pub mod record;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::descriptor::TileDescriptor;
pub use record::{decode_record, encode_record, record_bytes};

const TRAILER_LEN: usize = 8;
const CONFIG_FILE: &str = "store.json";
const PLACEMENT_FILE: &str = "placement.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("tile {0} not found")]
    NotFound(String),
    #[error("node {0} not found")]
    UnknownNode(String),
    #[error("chunk {chunk_id} unavailable: no live replica")]
    Unavailable { chunk_id: String },
    #[error("tile {0} already stored with different content")]
    Conflict(String),
    #[error("checksum mismatch in chunk {chunk_id} on {node_id}")]
    Checksum { chunk_id: String, node_id: String },
    #[error("record of {size} bytes exceeds chunk size {limit}")]
    RecordTooLarge { size: usize, limit: usize },
    #[error("format: {0}")]
    Format(String),
    #[error("invalid store configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub nodes: usize,
    pub replication: usize,
    pub chunk_size: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { nodes: 5, replication: 3, chunk_size: 8 << 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreNode {
    pub node_id: String,
    pub root_path: PathBuf,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PlacementEntry {
    chunk_id: String,
    nodes: Vec<String>,
    records: u32,
}

/// Outcome of a successful put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    /// Same tile id with identical content was already present.
    Unchanged,
}

#[derive(Debug, Clone)]
enum Location {
    Open(usize),
    Sealed { chunk: usize, slot: usize },
}

#[derive(Default)]
struct OpenChunk {
    records: Vec<TileDescriptor>,
    bytes: Vec<u8>,
    /// Byte offset of each record in `bytes`.
    offsets: Vec<usize>,
}

struct Inner {
    nodes: Vec<StoreNode>,
    /// Sealed chunks in seal order.
    chunks: Vec<PlacementEntry>,
    index: HashMap<String, Location>,
    open: OpenChunk,
    placement_log: File,
}

/// Chunk-structured descriptor repository. `put`, `get` and scans can be
/// called from many threads.
pub struct DescriptorStore {
    root: PathBuf,
    config: StoreConfig,
    inner: RwLock<Inner>,
    /// Verified, decoded sealed chunks keyed by chunk position.
    cache: Mutex<HashMap<usize, Arc<Vec<TileDescriptor>>>>,
}

fn node_id(i: usize) -> String {
    format!("node-{i:02}")
}

fn chunk_file(node_root: &Path, chunk_id: &str) -> PathBuf {
    node_root.join(format!("{chunk_id}.chk"))
}

fn rendezvous_score(chunk_id: &str, node_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(chunk_id.as_bytes());
    h.update([0u8]);
    h.update(node_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Chunk file body: records, then `record_count: u32` and CRC32 over
/// everything before the CRC.
fn seal_bytes(records: &[u8], count: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() + TRAILER_LEN);
    out.extend_from_slice(records);
    out.extend_from_slice(&count.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Verifies the trailer and decodes every record of a chunk file.
pub fn decode_chunk(bytes: &[u8]) -> std::result::Result<Vec<TileDescriptor>, String> {
    if bytes.len() < TRAILER_LEN {
        return Err("chunk shorter than its trailer".into());
    }
    let body_end = bytes.len() - 4;
    let crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != crc {
        return Err("crc mismatch".into());
    }
    let records_end = body_end - 4;
    let count = u32::from_le_bytes(bytes[records_end..body_end].try_into().unwrap()) as usize;
    let mut pos = 0;
    let mut out = Vec::with_capacity(count);
    while pos < records_end {
        out.push(decode_record(&bytes[..records_end], &mut pos).map_err(|e| e.to_string())?);
    }
    if out.len() != count {
        return Err(format!("trailer says {count} records, found {}", out.len()));
    }
    Ok(out)
}

impl DescriptorStore {
    /// Opens the store at `root`, creating it with `config` if absent. An
    /// existing store keeps its persisted configuration.
    pub fn open(root: impl AsRef<Path>, config: StoreConfig) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let config_path = root.join(CONFIG_FILE);
        let config = if config_path.exists() {
            serde_json::from_slice(&fs::read(&config_path)?).map_err(|e| StoreError::Format(e.to_string()))?
        } else {
            if config.nodes == 0 || config.replication == 0 || config.chunk_size <= TRAILER_LEN {
                return Err(StoreError::Config(format!("{config:?}")));
            }
            fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap())?;
            config
        };
        let nodes: Vec<StoreNode> = (0..config.nodes)
            .map(|i| StoreNode { node_id: node_id(i), root_path: root.join(node_id(i)), alive: true })
            .collect();
        for n in &nodes {
            fs::create_dir_all(&n.root_path)?;
        }

        let placement_path = root.join(PLACEMENT_FILE);
        let mut chunks = Vec::new();
        if placement_path.exists() {
            for line in BufReader::new(File::open(&placement_path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<PlacementEntry>(&line) {
                    Ok(e) => chunks.push(e),
                    Err(e) => log::warn!("placement journal: {e}; ignoring line"),
                }
            }
        }
        let placement_log = OpenOptions::new().create(true).append(true).open(&placement_path)?;
        let store = Self {
            root,
            config,
            inner: RwLock::new(Inner {
                nodes,
                chunks,
                index: HashMap::new(),
                open: OpenChunk::default(),
                placement_log,
            }),
            cache: Mutex::new(HashMap::new()),
        };
        store.rebuild_index()?;
        Ok(store)
    }

    fn rebuild_index(&self) -> Result<()> {
        let n = self.inner.read().unwrap().chunks.len();
        let mut index = HashMap::new();
        for chunk in 0..n {
            let records = self.load_chunk(chunk)?;
            for (slot, d) in records.iter().enumerate() {
                index.insert(d.tile_id.clone(), Location::Sealed { chunk, slot });
            }
        }
        self.inner.write().unwrap().index = index;
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    pub fn put(&self, d: &TileDescriptor) -> Result<PutOutcome> {
        d.validate().map_err(|e| StoreError::Format(format!("{}: {e}", d.tile_id)))?;
        let bytes = record_bytes(d);
        if bytes.len() + TRAILER_LEN > self.config.chunk_size {
            return Err(StoreError::RecordTooLarge { size: bytes.len(), limit: self.config.chunk_size });
        }
        let existing = {
            let inner = self.inner.read().unwrap();
            inner.index.get(&d.tile_id).cloned()
        };
        if existing.is_some() {
            let current = self.get(&d.tile_id)?;
            return if record_bytes(&current) == bytes {
                Ok(PutOutcome::Unchanged)
            } else {
                Err(StoreError::Conflict(d.tile_id.clone()))
            };
        }

        let mut inner = self.inner.write().unwrap();
        // Re-check under the write lock; another writer may have won.
        if inner.index.contains_key(&d.tile_id) {
            drop(inner);
            let current = self.get(&d.tile_id)?;
            return if record_bytes(&current) == bytes {
                Ok(PutOutcome::Unchanged)
            } else {
                Err(StoreError::Conflict(d.tile_id.clone()))
            };
        }
        if inner.open.bytes.len() + bytes.len() + TRAILER_LEN > self.config.chunk_size {
            self.seal(&mut inner)?;
        }
        let slot = inner.open.records.len();
        let offset = inner.open.bytes.len();
        inner.open.offsets.push(offset);
        inner.open.bytes.extend_from_slice(&bytes);
        inner.open.records.push(d.clone());
        inner.index.insert(d.tile_id.clone(), Location::Open(slot));
        Ok(PutOutcome::Inserted)
    }

    /// Seals the open chunk, if any.
    pub fn flush(&self) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        if inner.open.records.is_empty() {
            return Ok(());
        }
        self.seal(&mut inner)
    }

    fn seal(&self, inner: &mut Inner) -> Result<()> {
        if inner.open.records.is_empty() {
            return Ok(());
        }
        let chunk_pos = inner.chunks.len();
        let chunk_id = format!("chunk-{chunk_pos:08}");
        let mut live: Vec<&StoreNode> = inner.nodes.iter().filter(|n| n.alive).collect();
        if live.is_empty() {
            return Err(StoreError::Unavailable { chunk_id });
        }
        live.sort_by_key(|n| std::cmp::Reverse(rendezvous_score(&chunk_id, &n.node_id)));
        live.truncate(self.config.replication);
        if live.len() < self.config.replication {
            log::warn!("{chunk_id}: only {} live nodes for replication {}", live.len(), self.config.replication);
        }

        let count = inner.open.records.len() as u32;
        let bytes = seal_bytes(&inner.open.bytes, count);
        for node in &live {
            let path = chunk_file(&node.root_path, &chunk_id);
            let tmp = path.with_extension("chk.tmp");
            fs::write(&tmp, &bytes)?;
            fs::rename(&tmp, &path)?;
        }
        let entry = PlacementEntry {
            chunk_id,
            nodes: live.iter().map(|n| n.node_id.clone()).collect(),
            records: count,
        };
        let mut line = serde_json::to_vec(&entry).unwrap();
        line.push(b'\n');
        inner.placement_log.write_all(&line)?;
        inner.placement_log.flush()?;
        inner.chunks.push(entry);

        let open = std::mem::take(&mut inner.open);
        for (slot, d) in open.records.iter().enumerate() {
            inner.index.insert(d.tile_id.clone(), Location::Sealed { chunk: chunk_pos, slot });
        }
        self.cache.lock().unwrap().insert(chunk_pos, Arc::new(open.records));
        Ok(())
    }

    /// Reads and verifies one replica of a sealed chunk, bypassing the cache.
    pub fn read_replica(&self, chunk_id: &str, node_id: &str) -> Result<Vec<TileDescriptor>> {
        let inner = self.inner.read().unwrap();
        let node = inner
            .nodes
            .iter()
            .find(|n| n.node_id == node_id)
            .ok_or_else(|| StoreError::UnknownNode(node_id.to_string()))?;
        let bytes = fs::read(chunk_file(&node.root_path, chunk_id))?;
        decode_chunk(&bytes).map_err(|reason| {
            log::warn!("{chunk_id} on {node_id}: {reason}");
            StoreError::Checksum { chunk_id: chunk_id.to_string(), node_id: node_id.to_string() }
        })
    }

    fn load_chunk(&self, chunk: usize) -> Result<Arc<Vec<TileDescriptor>>> {
        let (chunk_id, live) = {
            let inner = self.inner.read().unwrap();
            let entry = &inner.chunks[chunk];
            let live: Vec<String> = entry
                .nodes
                .iter()
                .filter(|id| inner.nodes.iter().any(|n| &n.node_id == *id && n.alive))
                .cloned()
                .collect();
            (entry.chunk_id.clone(), live)
        };
        if live.is_empty() {
            return Err(StoreError::Unavailable { chunk_id });
        }
        if let Some(hit) = self.cache.lock().unwrap().get(&chunk) {
            return Ok(hit.clone());
        }
        for node in &live {
            match self.read_replica(&chunk_id, node) {
                Ok(records) => {
                    let records = Arc::new(records);
                    self.cache.lock().unwrap().insert(chunk, records.clone());
                    return Ok(records);
                }
                Err(e) => log::warn!("{chunk_id} replica on {node} unreadable: {e}"),
            }
        }
        Err(StoreError::Unavailable { chunk_id })
    }

    pub fn get(&self, tile_id: &str) -> Result<TileDescriptor> {
        let loc = {
            let inner = self.inner.read().unwrap();
            match inner.index.get(tile_id) {
                None => return Err(StoreError::NotFound(tile_id.to_string())),
                Some(Location::Open(slot)) => return Ok(inner.open.records[*slot].clone()),
                Some(loc) => loc.clone(),
            }
        };
        let Location::Sealed { chunk, slot } = loc else { unreachable!() };
        Ok(self.load_chunk(chunk)?[slot].clone())
    }

    pub fn contains(&self, tile_id: &str) -> bool {
        self.inner.read().unwrap().index.contains_key(tile_id)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every descriptor in storage order: sealed chunks first, then the open one.
    fn ordered(&self) -> Result<Vec<TileDescriptor>> {
        let n = self.inner.read().unwrap().chunks.len();
        let mut out = Vec::with_capacity(self.len());
        for chunk in 0..n {
            out.extend(self.load_chunk(chunk)?.iter().cloned());
        }
        out.extend(self.inner.read().unwrap().open.records.iter().cloned());
        Ok(out)
    }

    /// Splits the archive into `num_partitions` disjoint, contiguous,
    /// count-balanced partitions (sizes differ by at most one record).
    pub fn scan_partitions(&self, num_partitions: usize) -> Result<Vec<Vec<TileDescriptor>>> {
        let parts = num_partitions.max(1);
        let mut all = self.ordered()?;
        let n = all.len();
        let mut out = Vec::with_capacity(parts);
        for i in (0..parts).rev() {
            let start = i * n / parts;
            out.push(all.split_off(start));
        }
        out.reverse();
        Ok(out)
    }

    pub fn scan(&self) -> Result<Vec<TileDescriptor>> {
        self.ordered()
    }

    pub fn product_count(&self) -> Result<usize> {
        Ok(self.ordered()?.iter().map(|d| d.meta.product_id.clone()).collect::<HashSet<_>>().len())
    }

    pub fn nodes(&self) -> Vec<StoreNode> {
        self.inner.read().unwrap().nodes.clone()
    }

    fn set_alive(&self, node_id: &str, alive: bool) -> Result<()> {
        let mut inner = self.inner.write().unwrap();
        let node = inner
            .nodes
            .iter_mut()
            .find(|n| n.node_id == node_id)
            .ok_or_else(|| StoreError::UnknownNode(node_id.to_string()))?;
        node.alive = alive;
        Ok(())
    }

    /// Excludes a node from reads and new placements.
    pub fn fail_node(&self, node_id: &str) -> Result<()> {
        self.set_alive(node_id, false)
    }

    pub fn revive_node(&self, node_id: &str) -> Result<()> {
        self.set_alive(node_id, true)
    }

    /// Sealed chunk ids with their replica nodes.
    pub fn placement(&self) -> BTreeMap<String, Vec<String>> {
        let inner = self.inner.read().unwrap();
        inner.chunks.iter().map(|c| (c.chunk_id.clone(), c.nodes.clone())).collect()
    }

    /// Chunk holding `tile_id`, or `None` while it sits in the open chunk.
    pub fn chunk_of(&self, tile_id: &str) -> Result<Option<String>> {
        let inner = self.inner.read().unwrap();
        match inner.index.get(tile_id) {
            None => Err(StoreError::NotFound(tile_id.to_string())),
            Some(Location::Open(_)) => Ok(None),
            Some(Location::Sealed { chunk, .. }) => Ok(Some(inner.chunks[*chunk].chunk_id.clone())),
        }
    }

    /// Tile ids grouped by sealed chunk.
    pub fn tiles_by_chunk(&self) -> BTreeMap<String, Vec<String>> {
        let inner = self.inner.read().unwrap();
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, loc) in &inner.index {
            if let Location::Sealed { chunk, .. } = loc {
                out.entry(inner.chunks[*chunk].chunk_id.clone()).or_default().push(id.clone());
            }
        }
        for v in out.values_mut() {
            v.sort();
        }
        out
    }

    /// Drops decoded chunks so the next read goes back to disk.
    pub fn clear_cache(&self) {
        self.cache.lock().unwrap().clear();
    }

    pub fn chunk_path(&self, chunk_id: &str, node_id: &str) -> PathBuf {
        chunk_file(&self.root.join(node_id), chunk_id)
    }
}

impl Drop for DescriptorStore {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::error!("flushing descriptor store on drop: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{DescriptorMeta, GeoBounds};
    use crate::vector::SparseVector;

    fn desc(i: usize) -> TileDescriptor {
        let a = (i % 500) as u32;
        let v = SparseVector::new(512, vec![a, a + 1, 511], vec![0.5, 0.25, 0.25]).unwrap();
        TileDescriptor::new(
            format!("p{}/{}/0", i % 7, i),
            GeoBounds { min_lat: i as f64, min_lon: 0.0, max_lat: i as f64 + 0.03, max_lon: 0.03 },
            v,
            DescriptorMeta {
                product_id: format!("p{}", i % 7),
                acquisition_time: "2015-05-05T00:00:00Z".parse().unwrap(),
                sensor_params: Default::default(),
            },
        )
        .unwrap()
    }

    fn small(dir: &Path) -> DescriptorStore {
        DescriptorStore::open(dir, StoreConfig { nodes: 5, replication: 3, chunk_size: 64 << 10 }).unwrap()
    }

    #[test]
    fn put_get_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        let d = desc(1);
        assert_eq!(s.put(&d).unwrap(), PutOutcome::Inserted);
        assert_eq!(s.get(&d.tile_id).unwrap(), d);
        assert_eq!(s.put(&d).unwrap(), PutOutcome::Unchanged);
        assert_eq!(s.len(), 1);
        assert!(matches!(s.get("nope"), Err(StoreError::NotFound(_))));

        let mut other = desc(2);
        other.tile_id = d.tile_id.clone();
        assert!(matches!(s.put(&other), Err(StoreError::Conflict(_))));
    }

    #[test]
    fn sealed_chunks_have_three_replicas() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        for i in 0..1000 {
            s.put(&desc(i)).unwrap();
        }
        s.flush().unwrap();
        let placement = s.placement();
        assert!(placement.len() > 1, "expected several chunks");
        for (chunk, nodes) in &placement {
            let distinct: HashSet<_> = nodes.iter().collect();
            assert_eq!(distinct.len(), 3, "{chunk}");
            for n in nodes {
                let path = s.chunk_path(chunk, n);
                let len = fs::metadata(&path).unwrap().len() as usize;
                assert!(len <= 64 << 10);
            }
        }
        assert_eq!(s.put(&desc(5)).unwrap(), PutOutcome::Unchanged);
    }

    #[test]
    fn reopen_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = small(dir.path());
            for i in 0..300 {
                s.put(&desc(i)).unwrap();
            }
        }
        let s = small(dir.path());
        assert_eq!(s.len(), 300);
        assert_eq!(s.get(&desc(123).tile_id).unwrap(), desc(123));
        assert_eq!(s.product_count().unwrap(), 7);
    }

    #[test]
    fn survives_replica_failures() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        let d = desc(3);
        s.put(&d).unwrap();
        s.flush().unwrap();
        let chunk = s.chunk_of(&d.tile_id).unwrap().unwrap();
        let replicas = s.placement()[&chunk].clone();
        s.clear_cache();
        s.fail_node(&replicas[0]).unwrap();
        s.fail_node(&replicas[1]).unwrap();
        assert_eq!(s.get(&d.tile_id).unwrap(), d);
        s.fail_node(&replicas[2]).unwrap();
        assert!(matches!(s.get(&d.tile_id), Err(StoreError::Unavailable { .. })));
        s.revive_node(&replicas[2]).unwrap();
        assert_eq!(s.get(&d.tile_id).unwrap(), d);
        assert!(matches!(s.fail_node("node-99"), Err(StoreError::UnknownNode(_))));
    }

    #[test]
    fn bit_flip_is_detected_and_other_replica_serves() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        for i in 0..20 {
            s.put(&desc(i)).unwrap();
        }
        s.flush().unwrap();
        let (chunk, nodes) = s.placement().into_iter().next().unwrap();
        let path = s.chunk_path(&chunk, &nodes[0]);
        let mut bytes = fs::read(&path).unwrap();
        for bit in [0usize, 77, bytes.len() * 8 - 1] {
            let mut flipped = bytes.clone();
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert!(decode_chunk(&flipped).is_err(), "bit {bit} undetected");
        }
        bytes[40] ^= 0x10;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(s.read_replica(&chunk, &nodes[0]), Err(StoreError::Checksum { .. })));
        s.clear_cache();
        assert_eq!(s.get(&desc(0).tile_id).unwrap(), desc(0));
    }

    #[test]
    fn losing_every_replica_file_makes_the_chunk_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        for i in 0..20 {
            s.put(&desc(i)).unwrap();
        }
        s.flush().unwrap();
        let (chunk, nodes) = s.placement().into_iter().next().unwrap();
        fs::write(s.chunk_path(&chunk, &nodes[0]), b"junk").unwrap();
        for n in &nodes[1..] {
            fs::remove_file(s.chunk_path(&chunk, n)).unwrap();
        }
        s.clear_cache();
        assert!(matches!(s.get(&desc(0).tile_id), Err(StoreError::Unavailable { chunk_id }) if chunk_id == chunk));
    }

    #[test]
    fn partitions_are_disjoint_balanced_and_complete() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        for i in 0..1000 {
            s.put(&desc(i)).unwrap();
        }
        let one = s.scan_partitions(1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 1000);
        for parts in [2, 3, 7, 16] {
            let p = s.scan_partitions(parts).unwrap();
            let sizes: Vec<_> = p.iter().map(|v| v.len()).collect();
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            assert!(max <= 2 * min && max - min <= 1);
            let ids: HashSet<_> = p.iter().flatten().map(|d| d.tile_id.clone()).collect();
            assert_eq!(ids.len(), 1000);
        }
        assert_eq!(s.scan_partitions(7).unwrap(), s.scan_partitions(7).unwrap());
    }

    #[test]
    fn as_many_partitions_as_records() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        for i in 0..5 {
            s.put(&desc(i)).unwrap();
        }
        let p = s.scan_partitions(5).unwrap();
        assert!(p.iter().all(|v| v.len() == 1));
    }
}
