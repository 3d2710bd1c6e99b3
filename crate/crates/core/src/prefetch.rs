//! The prefetch worker: fetches blocks in strict sequential order across a
//! [`FileSet`] into cache locations, stalling while every location is full.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use crate::cache::{choose_location, BlockKey, BlockRecord, BlockState, CacheLocation};
use crate::error::{Error, Result};
use crate::store::ObjectRef;

/// An ordered list of objects read as one logical byte stream.
#[derive(Debug, Clone)]
pub struct FileSet {
    refs: Vec<ObjectRef>,
    sizes: Vec<u64>,
    /// `cumulative_offsets[i]` is the logical offset of file `i`; one extra
    /// trailing entry holds the total size.
    cumulative_offsets: Vec<u64>,
    blocksize: u64,
}

impl FileSet {
    /// Resolves every object size up front.
    pub fn new(refs: Vec<ObjectRef>, blocksize: u64) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::InvalidFileSet("no files given".into()));
        }
        if blocksize == 0 {
            return Err(Error::InvalidFileSet("blocksize must be at least 1".into()));
        }
        let sizes = refs.iter().map(ObjectRef::size).collect::<Result<Vec<_>>>()?;
        let mut cumulative_offsets = Vec::with_capacity(sizes.len() + 1);
        let mut total = 0u64;
        cumulative_offsets.push(0);
        for s in &sizes {
            total += s;
            cumulative_offsets.push(total);
        }
        Ok(FileSet {
            refs,
            sizes,
            cumulative_offsets,
            blocksize,
        })
    }

    pub fn refs(&self) -> &[ObjectRef] {
        &self.refs
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn cumulative_offsets(&self) -> &[u64] {
        &self.cumulative_offsets[..self.sizes.len()]
    }

    pub fn blocksize(&self) -> u64 {
        self.blocksize
    }

    pub fn file_count(&self) -> usize {
        self.refs.len()
    }

    pub fn total_size(&self) -> u64 {
        *self.cumulative_offsets.last().unwrap()
    }

    pub fn blocks_in_file(&self, file_index: usize) -> u64 {
        self.sizes[file_index].div_ceil(self.blocksize)
    }

    /// Total number of blocks, counting each file separately.
    pub fn block_count(&self) -> u64 {
        (0..self.file_count()).map(|i| self.blocks_in_file(i)).sum()
    }

    /// Largest single block in the set.
    pub fn max_block_len(&self) -> u64 {
        self.sizes.iter().map(|&s| s.min(self.blocksize)).max().unwrap_or(0)
    }

    pub fn contains(&self, key: BlockKey) -> bool {
        key.file_index < self.file_count() && key.block_index < self.blocks_in_file(key.file_index)
    }

    /// Offset within its file and length of block `key`.
    pub fn block_range(&self, key: BlockKey) -> (u64, u64) {
        let start = key.block_index * self.blocksize;
        let end = (start + self.blocksize).min(self.sizes[key.file_index]);
        (start, end - start)
    }

    pub fn block_len(&self, key: BlockKey) -> u64 {
        self.block_range(key).1
    }

    /// Logical stream offset of the first byte of `key`.
    pub fn block_start(&self, key: BlockKey) -> u64 {
        self.cumulative_offsets[key.file_index] + key.block_index * self.blocksize
    }

    /// First block at or after `key` (normalizing past exhausted or empty files).
    fn normalize(&self, mut key: BlockKey) -> Option<BlockKey> {
        while key.file_index < self.file_count() {
            if key.block_index < self.blocks_in_file(key.file_index) {
                return Some(key);
            }
            key = BlockKey::new(key.file_index + 1, 0);
        }
        None
    }

    pub fn first_key(&self) -> Option<BlockKey> {
        self.normalize(BlockKey::new(0, 0))
    }

    pub fn next_key(&self, key: BlockKey) -> Option<BlockKey> {
        self.normalize(BlockKey::new(key.file_index, key.block_index + 1))
    }

    /// Every block in fetch order.
    pub fn keys(&self) -> impl Iterator<Item = BlockKey> + '_ {
        std::iter::successors(self.first_key(), move |k| self.next_key(*k))
    }

    /// Block holding logical offset `pos` and the offset inside that block.
    pub fn locate(&self, pos: u64) -> Option<(BlockKey, u64)> {
        if pos >= self.total_size() {
            return None;
        }
        // Last file starting at or before `pos`; empty files share a start
        // offset with their successor so this lands on the non-empty one.
        let file_index = self.cumulative_offsets[..self.sizes.len()].partition_point(|&o| o <= pos) - 1;
        let within = pos - self.cumulative_offsets[file_index];
        let key = BlockKey::new(file_index, within / self.blocksize);
        Some((key, within % self.blocksize))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Every block reached the cache.
    Complete,
    /// The fetch flag was cleared before all blocks were fetched.
    Stopped,
    Failed { key: BlockKey, reason: String },
}

#[derive(Debug, Default)]
pub(crate) struct StateInner {
    /// Next block to fetch; `None` once every block has been fetched.
    pub cursor: Option<BlockKey>,
    pub records: BTreeMap<BlockKey, BlockRecord>,
    pub outcome: Option<Outcome>,
    /// Keys marked for eviction, in marking order.
    pub pending_evict: VecDeque<BlockKey>,
    /// Tells the evictor to run its final sweep and exit.
    pub shutdown: bool,
}

/// State shared by the prefetch worker, the reader and the evictor.
#[derive(Debug)]
pub struct PrefetchState {
    fetch: AtomicBool,
    inner: Mutex<StateInner>,
    changed: Condvar,
}

impl PrefetchState {
    pub fn new(fs: &FileSet) -> Arc<Self> {
        Arc::new(PrefetchState {
            fetch: AtomicBool::new(true),
            inner: Mutex::new(StateInner {
                cursor: fs.first_key(),
                ..StateInner::default()
            }),
            changed: Condvar::new(),
        })
    }

    pub fn is_fetching(&self) -> bool {
        self.fetch.load(Ordering::SeqCst)
    }

    /// Clears the fetch flag and wakes every waiter.
    pub fn stop(&self) {
        self.fetch.store(false, Ordering::SeqCst);
        let _guard = self.lock();
        self.changed.notify_all();
    }

    /// Next block the worker will fetch, or `None` when all are fetched.
    pub fn cursor(&self) -> Option<BlockKey> {
        self.lock().cursor
    }

    pub fn block_state(&self, key: BlockKey) -> Option<BlockState> {
        self.lock().records.get(&key).map(|r| r.state)
    }

    pub fn record(&self, key: BlockKey) -> Option<BlockRecord> {
        self.lock().records.get(&key).cloned()
    }

    pub fn records(&self) -> Vec<BlockRecord> {
        self.lock().records.values().cloned().collect()
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.lock().outcome.clone()
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, StateInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn notify(&self) {
        self.changed.notify_all();
    }

    pub(crate) fn wait<'a>(&self, guard: MutexGuard<'a, StateInner>) -> MutexGuard<'a, StateInner> {
        self.changed.wait(guard).unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn wait_timeout<'a>(
        &self,
        guard: MutexGuard<'a, StateInner>,
        timeout: Duration,
    ) -> MutexGuard<'a, StateInner> {
        self.changed
            .wait_timeout(guard, timeout)
            .unwrap_or_else(|p| p.into_inner())
            .0
    }

    fn finish(&self, outcome: Outcome) {
        let mut inner = self.lock();
        inner.outcome.get_or_insert(outcome);
        self.changed.notify_all();
    }
}

#[derive(Debug, Clone)]
pub struct PrefetchOptions {
    /// Pause between placement attempts while every location is full.
    pub poll_interval: Duration,
    /// Attempts per block before the run fails.
    pub attempts: u32,
    pub retry_delay: Duration,
    /// After each block write, sum the block files on disk in every location
    /// and count any location exceeding its capacity.
    pub audit_capacity: bool,
}

impl Default for PrefetchOptions {
    fn default() -> Self {
        PrefetchOptions {
            poll_interval: Duration::from_millis(10),
            attempts: 3,
            retry_delay: Duration::from_millis(100),
            audit_capacity: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PrefetchReport {
    /// Keys in the order they were fetched.
    pub fetched: Vec<BlockKey>,
    pub bytes_fetched: u64,
    /// Time spent waiting for cache space.
    pub stalled: Duration,
    /// Placement attempts that found every location full.
    pub stalls: u64,
    pub complete: bool,
    pub elapsed: Duration,
    pub capacity_violations: u64,
}

/// Fails with `StorageConfig` if some block cannot fit in any location even
/// when it is empty.
pub fn validate_tiers(fs: &FileSet, tiers: &[Arc<CacheLocation>]) -> Result<()> {
    if tiers.is_empty() {
        return Err(Error::StorageConfig("at least one cache location is required".into()));
    }
    let largest = tiers.iter().map(|t| t.capacity()).max().unwrap_or(0);
    let needed = fs.max_block_len();
    if needed > largest {
        return Err(Error::StorageConfig(format!(
            "a {needed}-byte block does not fit in any cache location (largest holds {largest} bytes)"
        )));
    }
    Ok(())
}

/// Fetches the block under the cursor and streams it into `sink`.
///
/// The record is registered as `Fetching` in `location` before the request.
pub fn fetch_next_block_into(
    fs: &FileSet,
    state: &PrefetchState,
    location: &Arc<CacheLocation>,
    sink: &mut dyn Write,
) -> Result<(BlockKey, u64)> {
    let key = {
        let mut inner = state.lock();
        let key = inner
            .cursor
            .ok_or_else(|| Error::Internal("fetch requested after every block was fetched".into()))?;
        match inner.records.get(&key).map(|r| r.state) {
            Some(s) if s >= BlockState::Cached => {
                return Err(Error::Internal(format!("block {key} is already {s:?}")));
            }
            _ => {}
        }
        inner.records.insert(
            key,
            BlockRecord {
                key,
                size: fs.block_len(key),
                location: location.clone(),
                state: BlockState::Fetching,
            },
        );
        key
    };
    let (offset, len) = fs.block_range(key);
    let n = fs.refs()[key.file_index].read_range_into(offset, len, sink)?;
    Ok((key, n))
}

/// In-memory variant of [`fetch_next_block_into`].
pub fn fetch_next_block(
    fs: &FileSet,
    state: &PrefetchState,
    location: &Arc<CacheLocation>,
) -> Result<(BlockKey, Vec<u8>)> {
    let mut buf = Vec::new();
    let (key, _) = fetch_next_block_into(fs, state, location, &mut buf)?;
    Ok((key, buf))
}

fn fetch_with_retries(
    fs: &FileSet,
    state: &PrefetchState,
    location: &Arc<CacheLocation>,
    key: BlockKey,
    opts: &PrefetchOptions,
) -> Result<u64> {
    let size = fs.block_len(key);
    let mut attempt = 1;
    loop {
        let written = location.write_block_with(key, size, |file| {
            let (fetched, n) = fetch_next_block_into(fs, state, location, file)?;
            debug_assert_eq!(fetched, key);
            Ok(n)
        });
        match written {
            Ok(_) => return Ok(size),
            Err(e) if attempt < opts.attempts.max(1) && state.is_fetching() => {
                log::warn!("block {key}: attempt {attempt} failed: {e}");
                attempt += 1;
                thread::sleep(opts.retry_delay);
            }
            Err(e) => return Err(e),
        }
    }
}

fn audit(tiers: &[Arc<CacheLocation>]) -> Result<u64> {
    let mut violations = 0;
    for t in tiers {
        if t.bytes_on_disk()? > t.capacity() {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Runs the prefetch loop until every block is cached, the fetch flag is
/// cleared, or a block fails permanently.
pub fn run_prefetch(
    fs: &FileSet,
    tiers: &[Arc<CacheLocation>],
    state: &PrefetchState,
    opts: &PrefetchOptions,
) -> Result<PrefetchReport> {
    let start = Instant::now();
    let mut report = PrefetchReport::default();
    let result = prefetch_loop(fs, tiers, state, opts, &mut report);
    report.elapsed = start.elapsed();
    match result {
        Ok(outcome) => {
            report.complete = outcome == Outcome::Complete;
            state.finish(outcome);
            Ok(report)
        }
        Err((key, e)) => {
            state.finish(Outcome::Failed {
                key,
                reason: e.to_string(),
            });
            Err(e)
        }
    }
}

fn prefetch_loop(
    fs: &FileSet,
    tiers: &[Arc<CacheLocation>],
    state: &PrefetchState,
    opts: &PrefetchOptions,
    report: &mut PrefetchReport,
) -> std::result::Result<Outcome, (BlockKey, Error)> {
    let first = fs.first_key().unwrap_or(BlockKey::new(0, 0));
    validate_tiers(fs, tiers).map_err(|e| (first, e))?;
    loop {
        if !state.is_fetching() {
            return Ok(Outcome::Stopped);
        }
        let Some(key) = state.cursor() else {
            return Ok(Outcome::Complete);
        };
        let size = fs.block_len(key);
        let location = choose_location(tiers, size).map_err(|e| (key, e))?;
        let Some(location) = location else {
            report.stalls += 1;
            let t = Instant::now();
            let guard = state.lock();
            if state.is_fetching() {
                drop(state.wait_timeout(guard, opts.poll_interval));
            }
            report.stalled += t.elapsed();
            continue;
        };

        let bytes = fetch_with_retries(fs, state, &location, key, opts).map_err(|e| (key, e))?;
        {
            let mut inner = state.lock();
            if let Some(rec) = inner.records.get_mut(&key) {
                rec.transition(BlockState::Cached).map_err(|e| (key, e))?;
            }
            inner.cursor = fs.next_key(key);
            state.notify();
        }
        report.fetched.push(key);
        report.bytes_fetched += bytes;
        if opts.audit_capacity {
            report.capacity_violations += audit(tiers).map_err(|e| (key, e))?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ObjectStore, SimStore, SimStoreParams};

    fn fileset(sizes: &[usize], blocksize: u64) -> (tempfile::TempDir, FileSet) {
        let dir = tempfile::tempdir().unwrap();
        let store: Arc<dyn ObjectStore> =
            Arc::new(SimStore::new(SimStoreParams::new(dir.path(), 0.0, 1e12).unwrap()).unwrap());
        let mut refs = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let name = format!("f{i:02}");
            let data: Vec<u8> = (0..n).map(|b| (b * 7 + i) as u8).collect();
            std::fs::write(dir.path().join(&name), data).unwrap();
            refs.push(ObjectRef::new(store.clone(), name).unwrap());
        }
        let fs = FileSet::new(refs, blocksize).unwrap();
        (dir, fs)
    }

    #[test]
    fn offsets_and_block_counts() {
        let (_d, fs) = fileset(&[30, 31, 0, 10], 10);
        assert_eq!(fs.cumulative_offsets(), [0, 30, 61, 61]);
        assert_eq!(fs.total_size(), 71);
        assert_eq!(fs.blocks_in_file(0), 3);
        assert_eq!(fs.blocks_in_file(1), 4);
        assert_eq!(fs.blocks_in_file(2), 0);
        assert_eq!(fs.block_count(), 8);
        assert_eq!(fs.block_range(BlockKey::new(1, 3)), (30, 1));
        let keys: Vec<_> = fs.keys().collect();
        assert_eq!(keys.len(), 8);
        assert_eq!(keys[7], BlockKey::new(3, 0));
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn locate_maps_offsets_to_blocks() {
        let (_d, fs) = fileset(&[30, 0, 25], 10);
        assert_eq!(fs.locate(0), Some((BlockKey::new(0, 0), 0)));
        assert_eq!(fs.locate(29), Some((BlockKey::new(0, 2), 9)));
        assert_eq!(fs.locate(30), Some((BlockKey::new(2, 0), 0)));
        assert_eq!(fs.locate(54), Some((BlockKey::new(2, 2), 4)));
        assert_eq!(fs.locate(55), None);
    }

    #[test]
    fn empty_sets_and_zero_blocksize_are_rejected() {
        assert!(matches!(FileSet::new(vec![], 10), Err(Error::InvalidFileSet(_))));
        let (_d, fs) = fileset(&[5], 1);
        assert!(matches!(FileSet::new(fs.refs().to_vec(), 0), Err(Error::InvalidFileSet(_))));
    }

    #[test]
    fn fetch_next_block_ranges() {
        let bs = 64;
        let (dir, fs) = fileset(&[bs as usize + 5], bs);
        let tier = Arc::new(CacheLocation::new(dir.path().join("c"), 1000, 0).unwrap());
        let state = PrefetchState::new(&fs);
        let source = std::fs::read(dir.path().join("f00")).unwrap();

        let (key, first) = fetch_next_block(&fs, &state, &tier).unwrap();
        assert_eq!(key, BlockKey::new(0, 0));
        assert_eq!(first, source[..64]);
        assert_eq!(state.block_state(key), Some(BlockState::Fetching));

        state.lock().cursor = fs.next_key(key);
        let (key, last) = fetch_next_block(&fs, &state, &tier).unwrap();
        assert_eq!(key, BlockKey::new(0, 1));
        assert_eq!(last, source[64..]);
        assert_eq!(last.len(), 5);

        state.lock().cursor = fs.next_key(key);
        assert!(matches!(fetch_next_block(&fs, &state, &tier), Err(Error::Internal(_))));
    }

    #[test]
    fn fetches_every_block_in_order() {
        let (dir, fs) = fileset(&[100], 10);
        let tier = Arc::new(CacheLocation::new(dir.path().join("c"), 1000, 0).unwrap());
        let state = PrefetchState::new(&fs);
        let report = run_prefetch(&fs, std::slice::from_ref(&tier), &state, &PrefetchOptions::default()).unwrap();
        assert!(report.complete);
        assert_eq!(report.fetched, (0..10).map(|b| BlockKey::new(0, b)).collect::<Vec<_>>());
        assert_eq!(state.outcome(), Some(Outcome::Complete));
        assert!(state.records().iter().all(|r| r.state == BlockState::Cached));

        let mut joined = Vec::new();
        for key in fs.keys() {
            joined.extend(std::fs::read(tier.block_path(key)).unwrap());
        }
        assert_eq!(joined, std::fs::read(dir.path().join("f00")).unwrap());
    }

    #[test]
    fn stalls_when_cache_is_full() {
        let (dir, fs) = fileset(&[40, 40], 10);
        let tier = Arc::new(CacheLocation::new(dir.path().join("c"), 20, 0).unwrap());
        let state = PrefetchState::new(&fs);
        let worker = {
            let (fs, tier, state) = (fs.clone(), tier.clone(), state.clone());
            thread::spawn(move || run_prefetch(&fs, &[tier], &state, &PrefetchOptions::default()))
        };
        thread::sleep(Duration::from_millis(150));
        assert_eq!(state.cursor(), Some(BlockKey::new(0, 2)));
        assert_eq!(state.records().len(), 2);

        // Free one block by hand; the worker reclaims it and moves on by one.
        std::fs::remove_file(tier.block_path(BlockKey::new(0, 0))).unwrap();
        thread::sleep(Duration::from_millis(150));
        assert_eq!(state.cursor(), Some(BlockKey::new(0, 3)));

        let t = Instant::now();
        state.stop();
        let report = worker.join().unwrap().unwrap();
        assert!(t.elapsed() < Duration::from_millis(100));
        assert!(!report.complete);
        assert!(report.stalls > 0);
        assert_eq!(state.outcome(), Some(Outcome::Stopped));
    }

    #[test]
    fn oversized_blocks_are_a_configuration_error() {
        let (dir, fs) = fileset(&[100], 50);
        let tier = Arc::new(CacheLocation::new(dir.path().join("c"), 49, 0).unwrap());
        let state = PrefetchState::new(&fs);
        let err = run_prefetch(&fs, &[tier], &state, &PrefetchOptions::default()).unwrap_err();
        assert!(matches!(err, Error::StorageConfig(_)));
        assert!(matches!(state.outcome(), Some(Outcome::Failed { .. })));
    }

    #[test]
    fn transport_failures_are_retried_then_reported() {
        let (dir, fs) = fileset(&[30], 10);
        let tier = Arc::new(CacheLocation::new(dir.path().join("c"), 100, 0).unwrap());
        std::fs::remove_file(dir.path().join("f00")).unwrap();
        let state = PrefetchState::new(&fs);
        let opts = PrefetchOptions {
            retry_delay: Duration::from_millis(20),
            ..PrefetchOptions::default()
        };
        let t = Instant::now();
        let err = run_prefetch(&fs, std::slice::from_ref(&tier), &state, &opts).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
        // Three attempts, two pauses.
        assert!(t.elapsed() >= Duration::from_millis(40));
        assert_eq!(tier.used(), 0);
        assert!(matches!(
            state.outcome(),
            Some(Outcome::Failed { key, .. }) if key == BlockKey::new(0, 0)
        ));
    }
}
