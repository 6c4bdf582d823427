//! Redeliverable task queue with visibility timeouts.
//!
//! A dequeued task is leased: it stays invisible until its visibility
//! deadline. If the worker does not complete it by then, the next dequeue
//! hands it out again under a fresh receipt, and the old receipt goes stale.
//! Every state change is appended to an optional JSON-lines journal that is
//! replayed on open.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::product::ProductRecord;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("task {0} already queued")]
    Duplicate(String),
    #[error("task {0} already completed")]
    AlreadyDone(String),
    #[error("only pending tasks can be enqueued")]
    NotPending,
    #[error("visibility timeout must be positive")]
    InvalidTimeout,
    #[error("receipt is stale: the task was leased again")]
    StaleReceipt,
    #[error("unknown receipt")]
    UnknownReceipt,
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().unwrap();
        *t += chrono::Duration::from_std(by).expect("duration in range");
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Pending,
    Leased,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestTask {
    pub task_id: String,
    pub product_uri: String,
    pub state: TaskState,
    pub visibility_deadline: Option<DateTime<Utc>>,
    pub receipt: Option<String>,
    pub attempts: u32,
    /// The manifest the worker needs to fetch and tile the product.
    pub product: ProductRecord,
    #[serde(default)]
    pub failure_reason: Option<String>,
}

impl IngestTask {
    pub fn for_product(product: ProductRecord) -> Self {
        Self {
            task_id: product.product_id.clone(),
            product_uri: product.uri.clone(),
            state: TaskState::Pending,
            visibility_deadline: None,
            receipt: None,
            attempts: 0,
            product,
            failure_reason: None,
        }
    }
}

/// Handle returned by [`TaskQueue::dequeue`].
#[derive(Debug, Clone)]
pub struct Lease {
    pub task: IngestTask,
    pub receipt: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    /// Deliverable now: pending plus leases whose deadline has passed.
    pub pending: usize,
    pub leased: usize,
    pub done: usize,
    pub failed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalEntry {
    Enqueue { task: IngestTask },
    Lease { task_id: String, receipt: String, deadline: DateTime<Utc>, attempts: u32 },
    Extend { task_id: String, deadline: DateTime<Utc> },
    Release { task_id: String },
    Complete { task_id: String },
    Fail { task_id: String, reason: String },
}

#[derive(Default)]
struct State {
    /// Keyed by enqueue sequence for FIFO delivery.
    tasks: BTreeMap<u64, IngestTask>,
    by_id: HashMap<String, u64>,
    receipts: HashMap<String, u64>,
    next_seq: u64,
    journal: Option<File>,
}

impl State {
    fn log(&mut self, entry: &JournalEntry) -> Result<(), QueueError> {
        if let Some(f) = self.journal.as_mut() {
            let mut line = serde_json::to_vec(entry).map_err(|e| QueueError::Journal(e.to_string()))?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(())
    }

    fn apply(&mut self, entry: JournalEntry) {
        match entry {
            JournalEntry::Enqueue { task } => {
                let seq = self.next_seq;
                self.next_seq += 1;
                self.by_id.insert(task.task_id.clone(), seq);
                self.tasks.insert(seq, task);
            }
            JournalEntry::Lease { task_id, receipt, deadline, attempts } => {
                if let Some(t) = self.task_mut(&task_id) {
                    t.state = TaskState::Leased;
                    t.receipt = Some(receipt.clone());
                    t.visibility_deadline = Some(deadline);
                    t.attempts = attempts;
                }
                if let Some(&seq) = self.by_id.get(&task_id) {
                    self.receipts.insert(receipt, seq);
                }
            }
            JournalEntry::Extend { task_id, deadline } => {
                if let Some(t) = self.task_mut(&task_id) {
                    t.visibility_deadline = Some(deadline);
                }
            }
            JournalEntry::Release { task_id } => {
                if let Some(t) = self.task_mut(&task_id) {
                    t.state = TaskState::Pending;
                    t.visibility_deadline = None;
                }
            }
            JournalEntry::Complete { task_id } => {
                if let Some(t) = self.task_mut(&task_id) {
                    t.state = TaskState::Done;
                    t.visibility_deadline = None;
                }
            }
            JournalEntry::Fail { task_id, reason } => {
                if let Some(t) = self.task_mut(&task_id) {
                    t.state = TaskState::Failed;
                    t.visibility_deadline = None;
                    t.failure_reason = Some(reason);
                }
            }
        }
    }

    fn commit(&mut self, entry: JournalEntry) -> Result<(), QueueError> {
        self.log(&entry)?;
        self.apply(entry);
        Ok(())
    }

    fn task_mut(&mut self, task_id: &str) -> Option<&mut IngestTask> {
        let seq = *self.by_id.get(task_id)?;
        self.tasks.get_mut(&seq)
    }

    /// Resolves a receipt to its task and checks that it is still the
    /// task's current lease.
    fn current(&self, receipt: &str) -> Result<&IngestTask, QueueError> {
        let seq = self.receipts.get(receipt).ok_or(QueueError::UnknownReceipt)?;
        let task = &self.tasks[seq];
        if task.receipt.as_deref() != Some(receipt) {
            return Err(QueueError::StaleReceipt);
        }
        Ok(task)
    }
}

pub struct TaskQueue {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    max_attempts: u32,
}

impl TaskQueue {
    pub fn in_memory(max_attempts: u32) -> Self {
        Self::with_clock(max_attempts, Arc::new(SystemClock))
    }

    pub fn with_clock(max_attempts: u32, clock: Arc<dyn Clock>) -> Self {
        Self { state: Mutex::new(State::default()), clock, max_attempts: max_attempts.max(1) }
    }

    /// Opens (or creates) a journaled queue, replaying existing entries.
    pub fn open(path: impl AsRef<Path>, max_attempts: u32, clock: Arc<dyn Clock>) -> Result<Self, QueueError> {
        let path = path.as_ref();
        let mut state = State::default();
        if path.exists() {
            for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JournalEntry>(&line) {
                    Ok(entry) => state.apply(entry),
                    // A torn final write is expected after a crash.
                    Err(e) => log::warn!("queue journal line {}: {e}; ignoring", lineno + 1),
                }
            }
        }
        state.journal = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(Self { state: Mutex::new(state), clock, max_attempts: max_attempts.max(1) })
    }

    /// Replays a journal without opening it for writing.
    pub fn snapshot(path: impl AsRef<Path>) -> Result<QueueStats, QueueError> {
        let q = TaskQueue::open(path, u32::MAX, Arc::new(SystemClock))?;
        Ok(q.stats())
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    pub fn enqueue(&self, task: IngestTask) -> Result<(), QueueError> {
        if task.state != TaskState::Pending {
            return Err(QueueError::NotPending);
        }
        let mut st = self.state.lock().unwrap();
        if let Some(&seq) = st.by_id.get(&task.task_id) {
            return Err(match st.tasks[&seq].state {
                TaskState::Done => QueueError::AlreadyDone(task.task_id),
                _ => QueueError::Duplicate(task.task_id),
            });
        }
        st.commit(JournalEntry::Enqueue { task })
    }

    pub fn dequeue(&self, visibility_timeout: Duration) -> Result<Option<Lease>, QueueError> {
        if visibility_timeout.is_zero() {
            return Err(QueueError::InvalidTimeout);
        }
        let now = self.clock.now();
        let deadline = now + chrono::Duration::from_std(visibility_timeout).map_err(|_| QueueError::InvalidTimeout)?;
        let mut st = self.state.lock().unwrap();

        let mut exhausted = Vec::new();
        let mut chosen = None;
        for task in st.tasks.values() {
            let available = match task.state {
                TaskState::Pending => true,
                TaskState::Leased => task.visibility_deadline.is_some_and(|d| d <= now),
                _ => false,
            };
            if !available {
                continue;
            }
            if task.attempts >= self.max_attempts {
                exhausted.push(task.task_id.clone());
                continue;
            }
            chosen = Some((task.task_id.clone(), task.attempts + 1));
            break;
        }
        for task_id in exhausted {
            let reason = format!("gave up after {} attempts", self.max_attempts);
            st.commit(JournalEntry::Fail { task_id, reason })?;
        }
        let Some((task_id, attempts)) = chosen else {
            return Ok(None);
        };
        let receipt = format!("{task_id}#{attempts}#{}", uuid::Uuid::new_v4().simple());
        st.commit(JournalEntry::Lease { task_id: task_id.clone(), receipt: receipt.clone(), deadline, attempts })?;
        let task = st.tasks[&st.by_id[&task_id]].clone();
        Ok(Some(Lease { task, receipt }))
    }

    /// Marks the leased task done. Completing an already-done task with the
    /// receipt that finished it is a no-op.
    pub fn complete(&self, receipt: &str) -> Result<(), QueueError> {
        let mut st = self.state.lock().unwrap();
        let task = st.current(receipt)?;
        match task.state {
            TaskState::Done => Ok(()),
            TaskState::Leased => {
                let task_id = task.task_id.clone();
                st.commit(JournalEntry::Complete { task_id })
            }
            _ => Err(QueueError::StaleReceipt),
        }
    }

    /// Heartbeat: pushes the visibility deadline of a live lease forward.
    pub fn extend(&self, receipt: &str, visibility_timeout: Duration) -> Result<(), QueueError> {
        if visibility_timeout.is_zero() {
            return Err(QueueError::InvalidTimeout);
        }
        let deadline = self.clock.now()
            + chrono::Duration::from_std(visibility_timeout).map_err(|_| QueueError::InvalidTimeout)?;
        let mut st = self.state.lock().unwrap();
        let task = st.current(receipt)?;
        if task.state != TaskState::Leased {
            return Err(QueueError::StaleReceipt);
        }
        let task_id = task.task_id.clone();
        st.commit(JournalEntry::Extend { task_id, deadline })
    }

    /// Reports a failed attempt. The task goes back to pending, or to failed
    /// once it has used up its attempts.
    pub fn fail(&self, receipt: &str, reason: &str) -> Result<TaskState, QueueError> {
        let mut st = self.state.lock().unwrap();
        let task = st.current(receipt)?;
        if task.state != TaskState::Leased {
            return Err(QueueError::StaleReceipt);
        }
        let task_id = task.task_id.clone();
        if task.attempts >= self.max_attempts {
            st.commit(JournalEntry::Fail { task_id, reason: reason.to_string() })?;
            Ok(TaskState::Failed)
        } else {
            st.commit(JournalEntry::Release { task_id })?;
            Ok(TaskState::Pending)
        }
    }

    pub fn get(&self, task_id: &str) -> Option<IngestTask> {
        let st = self.state.lock().unwrap();
        st.by_id.get(task_id).map(|seq| st.tasks[seq].clone())
    }

    pub fn tasks(&self) -> Vec<IngestTask> {
        self.state.lock().unwrap().tasks.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> QueueStats {
        let now = self.clock.now();
        let st = self.state.lock().unwrap();
        let mut s = QueueStats::default();
        for t in st.tasks.values() {
            match t.state {
                TaskState::Pending => s.pending += 1,
                TaskState::Leased if t.visibility_deadline.is_some_and(|d| d <= now) => s.pending += 1,
                TaskState::Leased => s.leased += 1,
                TaskState::Done => s.done += 1,
                TaskState::Failed => s.failed += 1,
            }
        }
        s
    }

    /// True once every task is done or failed.
    pub fn is_drained(&self) -> bool {
        let s = self.stats();
        s.pending == 0 && s.leased == 0
    }
}

/// Worker pool sizing driven by queue length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub min_workers: usize,
    pub max_workers: usize,
    pub tasks_per_worker: usize,
}

/// `clamp(ceil(queue_len / tasks_per_worker), min_workers, max_workers)`.
pub fn scaling_policy(queue_len: usize, _active_workers: usize, config: &ScalingConfig) -> usize {
    let per = config.tasks_per_worker.max(1);
    queue_len.div_ceil(per).clamp(config.min_workers, config.max_workers.max(config.min_workers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::product::GeoPoint;

    fn task(id: &str) -> IngestTask {
        IngestTask::for_product(ProductRecord {
            product_id: id.into(),
            uri: format!("{id}.grd"),
            rows: 8,
            cols: 8,
            pixel_spacing_m: 6.0,
            geo_origin: GeoPoint::default(),
            acquisition_time: "2015-01-01T00:00:00Z".parse().unwrap(),
            sensor_params: Default::default(),
        })
    }

    fn manual() -> (Arc<ManualClock>, TaskQueue) {
        let clock = Arc::new(ManualClock::new("2020-01-01T00:00:00Z".parse().unwrap()));
        let q = TaskQueue::with_clock(3, clock.clone());
        (clock, q)
    }

    const T: Duration = Duration::from_secs(30);

    #[test]
    fn enqueue_rules() {
        let (_, q) = manual();
        q.enqueue(task("a")).unwrap();
        assert_eq!(q.len(), 1);
        assert!(matches!(q.enqueue(task("a")), Err(QueueError::Duplicate(_))));
        let lease = q.dequeue(T).unwrap().unwrap();
        q.complete(&lease.receipt).unwrap();
        assert!(matches!(q.enqueue(task("a")), Err(QueueError::AlreadyDone(_))));
        let mut t = task("b");
        t.state = TaskState::Leased;
        assert!(matches!(q.enqueue(t), Err(QueueError::NotPending)));
    }

    #[test]
    fn empty_queue_and_bad_timeout() {
        let (_, q) = manual();
        assert!(q.dequeue(T).unwrap().is_none());
        assert!(matches!(q.dequeue(Duration::ZERO), Err(QueueError::InvalidTimeout)));
    }

    #[test]
    fn lease_hides_task_until_deadline() {
        let (clock, q) = manual();
        q.enqueue(task("a")).unwrap();
        let first = q.dequeue(T).unwrap().unwrap();
        assert_eq!(first.task.attempts, 1);
        assert_eq!(first.task.state, TaskState::Leased);
        assert!(first.task.visibility_deadline.is_some());
        assert!(q.dequeue(T).unwrap().is_none());

        clock.advance(Duration::from_secs(31));
        let second = q.dequeue(T).unwrap().unwrap();
        assert_eq!(second.task.task_id, "a");
        assert_eq!(second.task.attempts, 2);
        assert_ne!(first.receipt, second.receipt);

        assert!(matches!(q.complete(&first.receipt), Err(QueueError::StaleReceipt)));
        q.complete(&second.receipt).unwrap();
        q.complete(&second.receipt).unwrap();
        assert!(q.dequeue(T).unwrap().is_none());
        assert_eq!(q.stats().done, 1);
    }

    #[test]
    fn completing_an_expired_but_unclaimed_lease_succeeds() {
        let (clock, q) = manual();
        q.enqueue(task("a")).unwrap();
        let l = q.dequeue(T).unwrap().unwrap();
        clock.advance(Duration::from_secs(60));
        q.complete(&l.receipt).unwrap();
        assert!(q.dequeue(T).unwrap().is_none());
    }

    #[test]
    fn heartbeat_extends_lease() {
        let (clock, q) = manual();
        q.enqueue(task("a")).unwrap();
        let l = q.dequeue(T).unwrap().unwrap();
        clock.advance(Duration::from_secs(20));
        q.extend(&l.receipt, T).unwrap();
        clock.advance(Duration::from_secs(20));
        assert!(q.dequeue(T).unwrap().is_none());
        clock.advance(Duration::from_secs(11));
        assert!(q.dequeue(T).unwrap().is_some());
        assert!(matches!(q.extend(&l.receipt, T), Err(QueueError::StaleReceipt)));
    }

    #[test]
    fn poison_task_fails_after_max_attempts() {
        let (_, q) = manual();
        q.enqueue(task("bad")).unwrap();
        q.enqueue(task("good")).unwrap();
        for attempt in 1..=3 {
            let l = q.dequeue(T).unwrap().unwrap();
            assert_eq!(l.task.task_id, "bad");
            let state = q.fail(&l.receipt, "corrupt raster").unwrap();
            assert_eq!(state, if attempt < 3 { TaskState::Pending } else { TaskState::Failed });
        }
        let l = q.dequeue(T).unwrap().unwrap();
        assert_eq!(l.task.task_id, "good");
        let bad = q.get("bad").unwrap();
        assert_eq!(bad.failure_reason.as_deref(), Some("corrupt raster"));
    }

    #[test]
    fn expired_leases_count_toward_attempts() {
        let (clock, q) = manual();
        q.enqueue(task("a")).unwrap();
        for _ in 0..3 {
            q.dequeue(T).unwrap().unwrap();
            clock.advance(Duration::from_secs(31));
        }
        assert!(q.dequeue(T).unwrap().is_none());
        assert_eq!(q.get("a").unwrap().state, TaskState::Failed);
    }

    #[test]
    fn concurrent_dequeue_is_exclusive() {
        let q = Arc::new(TaskQueue::in_memory(3));
        q.enqueue(task("only")).unwrap();
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let q = q.clone();
                std::thread::spawn(move || q.dequeue(T).unwrap().is_some())
            })
            .collect();
        let got: usize = handles.into_iter().map(|h| h.join().unwrap() as usize).sum();
        assert_eq!(got, 1);
    }

    #[test]
    fn journal_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queue.journal");
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        {
            let q = TaskQueue::open(&path, 3, clock.clone()).unwrap();
            for id in ["a", "b", "c"] {
                q.enqueue(task(id)).unwrap();
            }
            let l = q.dequeue(T).unwrap().unwrap();
            q.complete(&l.receipt).unwrap();
            let _leased = q.dequeue(T).unwrap().unwrap();
        }
        let q = TaskQueue::open(&path, 3, clock).unwrap();
        let s = q.stats();
        assert_eq!((s.pending, s.leased, s.done), (1, 1, 1));
        assert!(matches!(q.enqueue(task("a")), Err(QueueError::AlreadyDone(_))));
        assert_eq!(TaskQueue::snapshot(&path).unwrap(), s);
    }

    #[test]
    fn scaling_policy_examples() {
        let cfg = |min, max, per| ScalingConfig { min_workers: min, max_workers: max, tasks_per_worker: per };
        assert_eq!(scaling_policy(0, 3, &cfg(1, 8, 10)), 1);
        assert_eq!(scaling_policy(100, 0, &cfg(1, 5, 10)), 5);
        assert_eq!(scaling_policy(25, 0, &cfg(1, 8, 10)), 3);
    }
}
