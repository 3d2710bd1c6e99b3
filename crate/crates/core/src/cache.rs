//! Local cache locations: capacity accounting, block placement and lazy
//! reclamation of space freed by the evictor.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Extension of cached block files.
pub const BLOCK_EXTENSION: &str = "blk";

/// Position of a block: which file of the set, and which block within it.
///
/// Ordering is lexicographic, which is also the prefetch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    pub file_index: usize,
    pub block_index: u64,
}

impl BlockKey {
    pub fn new(file_index: usize, block_index: u64) -> Self {
        BlockKey {
            file_index,
            block_index,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.{}.{BLOCK_EXTENSION}", self.file_index, self.block_index)
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.file_index, self.block_index)
    }
}

/// Lifecycle of a cached block. Transitions only move forward one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockState {
    Fetching,
    Cached,
    MarkedEvict,
    Evicted,
}

impl BlockState {
    pub fn successor(self) -> Option<BlockState> {
        match self {
            BlockState::Fetching => Some(BlockState::Cached),
            BlockState::Cached => Some(BlockState::MarkedEvict),
            BlockState::MarkedEvict => Some(BlockState::Evicted),
            BlockState::Evicted => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockRecord {
    pub key: BlockKey,
    pub size: u64,
    pub location: Arc<CacheLocation>,
    pub state: BlockState,
}

impl BlockRecord {
    pub fn path(&self) -> PathBuf {
        self.location.block_path(self.key)
    }

    /// Moves to `next`, which must be the immediate successor state.
    pub fn transition(&mut self, next: BlockState) -> Result<()> {
        if self.state.successor() != Some(next) {
            return Err(Error::Internal(format!(
                "illegal transition {:?} -> {next:?} for block {}",
                self.state, self.key
            )));
        }
        self.state = next;
        Ok(())
    }
}

/// A directory with a byte budget and a placement priority (lower is preferred).
///
/// `used` is an in-memory counter: it grows when a block is written and is
/// only corrected downwards by [`CacheLocation::verify_used`], which checks
/// which accounted blocks have disappeared from disk.
pub struct CacheLocation {
    path: PathBuf,
    capacity: u64,
    priority: u32,
    used: AtomicU64,
    peak: AtomicU64,
    accounted: Mutex<BTreeMap<BlockKey, u64>>,
}

impl CacheLocation {
    pub fn new(path: impl Into<PathBuf>, capacity: u64, priority: u32) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path)?;
        Ok(CacheLocation {
            path,
            capacity,
            priority,
            used: AtomicU64::new(0),
            peak: AtomicU64::new(0),
            accounted: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn priority(&self) -> u32 {
        self.priority
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn available(&self) -> u64 {
        self.capacity.saturating_sub(self.used())
    }

    /// Highest value `used` has reached.
    pub fn peak_used(&self) -> u64 {
        self.peak.load(Ordering::SeqCst)
    }

    /// `<path>/<file_index>.<block_index>.blk`
    pub fn block_path(&self, key: BlockKey) -> PathBuf {
        self.path.join(key.file_name())
    }

    /// Atomically claims `bytes` of space. The claim is released on drop
    /// unless committed to a block.
    pub fn reserve(&self, bytes: u64) -> Result<Reservation<'_>> {
        let claimed = self
            .used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                used.checked_add(bytes).filter(|&total| total <= self.capacity)
            });
        match claimed {
            Ok(before) => {
                self.peak.fetch_max(before + bytes, Ordering::SeqCst);
                Ok(Reservation {
                    location: self,
                    bytes,
                    committed: false,
                })
            }
            Err(used) => Err(Error::StorageFull {
                path: self.path.clone(),
                requested: bytes,
                used,
                capacity: self.capacity,
            }),
        }
    }

    /// Persists `payload` as block `key`, charging its true length.
    pub fn write_block(self: &Arc<Self>, key: BlockKey, payload: &[u8]) -> Result<BlockRecord> {
        self.write_block_with(key, payload.len() as u64, |file| {
            file.write_all(payload)?;
            Ok(payload.len() as u64)
        })
    }

    /// Reserves `size` bytes, creates the block file and lets `fill` write it.
    /// `fill` must write exactly `size` bytes. On failure the partial file is
    /// removed and the reservation released.
    pub fn write_block_with<F>(self: &Arc<Self>, key: BlockKey, size: u64, fill: F) -> Result<BlockRecord>
    where
        F: FnOnce(&mut fs::File) -> Result<u64>,
    {
        let reservation = self.reserve(size)?;
        let path = self.block_path(key);
        let written = fs::File::create(&path)
            .map_err(Error::from)
            .and_then(|mut file| {
                let n = fill(&mut file)?;
                file.flush()?;
                Ok(n)
            });
        match written {
            Ok(n) if n == size => {
                reservation.commit(key);
                Ok(BlockRecord {
                    key,
                    size,
                    location: self.clone(),
                    state: BlockState::Cached,
                })
            }
            outcome => {
                let _ = fs::remove_file(&path);
                match outcome {
                    Ok(n) => Err(Error::Internal(format!(
                        "block {key}: wrote {n} bytes, expected {size}"
                    ))),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Keys of blocks currently charged to this location.
    pub fn accounted_keys(&self) -> Vec<BlockKey> {
        self.accounted.lock().unwrap().keys().copied().collect()
    }

    /// Checks which of `expected` no longer exist on disk and releases their
    /// space. Returns the number of bytes reclaimed. Keys that were never
    /// charged here, or were already reclaimed, are ignored.
    pub fn verify_used(&self, expected: &[BlockKey]) -> Result<u64> {
        fs::read_dir(&self.path)?;
        let mut accounted = self.accounted.lock().unwrap();
        let mut reclaimed = 0;
        for key in expected {
            let Some(&size) = accounted.get(key) else {
                continue;
            };
            if !self.block_path(*key).try_exists()? {
                accounted.remove(key);
                self.used.fetch_sub(size, Ordering::SeqCst);
                reclaimed += size;
            }
        }
        Ok(reclaimed)
    }

    /// [`verify_used`](Self::verify_used) over every accounted block.
    pub fn reclaim(&self) -> Result<u64> {
        self.verify_used(&self.accounted_keys())
    }

    /// Sum of the sizes of `.blk` files present in the directory.
    pub fn bytes_on_disk(&self) -> io::Result<u64> {
        let mut total = 0;
        for entry in fs::read_dir(&self.path)? {
            let entry = entry?;
            let is_block = entry.path().extension().is_some_and(|e| e == BLOCK_EXTENSION);
            if is_block {
                match entry.metadata() {
                    Ok(meta) => total += meta.len(),
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(total)
    }
}

impl fmt::Debug for CacheLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CacheLocation")
            .field("path", &self.path)
            .field("capacity", &self.capacity)
            .field("used", &self.used())
            .field("priority", &self.priority)
            .finish()
    }
}

#[must_use]
pub struct Reservation<'a> {
    location: &'a CacheLocation,
    bytes: u64,
    committed: bool,
}

impl Reservation<'_> {
    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    fn commit(mut self, key: BlockKey) {
        self.location.accounted.lock().unwrap().insert(key, self.bytes);
        self.committed = true;
    }
}

impl Drop for Reservation<'_> {
    fn drop(&mut self) {
        if !self.committed {
            self.location.used.fetch_sub(self.bytes, Ordering::SeqCst);
        }
    }
}

/// Picks the first location, in priority order, with room for `size` bytes.
/// A location that looks full is re-checked with `verify_used` before moving
/// on to the next one. `None` means every location is full right now.
pub fn choose_location(tiers: &[Arc<CacheLocation>], size: u64) -> Result<Option<Arc<CacheLocation>>> {
    for loc in tiers {
        if loc.available() < size {
            loc.reclaim()?;
        }
        if loc.available() >= size {
            return Ok(Some(loc.clone()));
        }
    }
    Ok(None)
}

/// A `path:capacity_bytes` pair as given on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierSpec {
    pub path: PathBuf,
    pub capacity: u64,
}

impl FromStr for TierSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (path, capacity) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::StorageConfig(format!("expected path:capacity_bytes, got `{s}`")))?;
        if path.is_empty() {
            return Err(Error::StorageConfig(format!("empty cache path in `{s}`")));
        }
        let capacity = capacity
            .trim()
            .parse()
            .map_err(|_| Error::StorageConfig(format!("bad capacity in `{s}`")))?;
        Ok(TierSpec {
            path: path.into(),
            capacity,
        })
    }
}

/// Parses a comma-separated tier list; earlier entries get higher priority.
pub fn parse_tier_list(s: &str) -> Result<Vec<TierSpec>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse())
        .collect()
}

/// Creates fresh locations from specs, in priority order.
pub fn build_tiers(specs: &[TierSpec]) -> Result<Vec<Arc<CacheLocation>>> {
    if specs.is_empty() {
        return Err(Error::StorageConfig("at least one cache location is required".into()));
    }
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| Ok(Arc::new(CacheLocation::new(&spec.path, spec.capacity, i as u32)?)))
        .collect()
}

/// Sorts locations by priority and rejects duplicate priorities.
pub fn order_tiers(mut tiers: Vec<Arc<CacheLocation>>) -> Result<Vec<Arc<CacheLocation>>> {
    if tiers.is_empty() {
        return Err(Error::StorageConfig("at least one cache location is required".into()));
    }
    tiers.sort_by_key(|t| t.priority());
    if let Some(w) = tiers.windows(2).find(|w| w[0].priority() == w[1].priority()) {
        return Err(Error::StorageConfig(format!(
            "cache locations {} and {} share priority {}",
            w[0].path().display(),
            w[1].path().display(),
            w[0].priority()
        )));
    }
    Ok(tiers)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    fn loc(dir: &Path, name: &str, capacity: u64, priority: u32) -> Arc<CacheLocation> {
        Arc::new(CacheLocation::new(dir.join(name), capacity, priority).unwrap())
    }

    #[test]
    fn block_paths() {
        let dir = tempfile::tempdir().unwrap();
        let l = loc(dir.path(), "t", 10, 0);
        assert_eq!(l.block_path(BlockKey::new(0, 0)), dir.path().join("t/0.0.blk"));
        assert_eq!(l.block_path(BlockKey::new(12, 7)), dir.path().join("t/12.7.blk"));
        assert_ne!(l.block_path(BlockKey::new(1, 11)), l.block_path(BlockKey::new(11, 1)));
    }

    #[test]
    fn prefers_highest_priority_with_room() {
        let dir = tempfile::tempdir().unwrap();
        let a = loc(dir.path(), "a", 100, 0);
        let b = loc(dir.path(), "b", 100, 1);
        let tiers = vec![a.clone(), b.clone()];
        assert!(Arc::ptr_eq(&choose_location(&tiers, 10).unwrap().unwrap(), &a));

        a.write_block(BlockKey::new(0, 0), &[0; 95]).unwrap();
        assert!(Arc::ptr_eq(&choose_location(&tiers, 10).unwrap().unwrap(), &b));

        b.write_block(BlockKey::new(0, 1), &[0; 95]).unwrap();
        assert!(choose_location(&tiers, 10).unwrap().is_none());

        // Once the evictor removes a block, verify_used frees the first tier again.
        fs::remove_file(a.block_path(BlockKey::new(0, 0))).unwrap();
        assert!(Arc::ptr_eq(&choose_location(&tiers, 10).unwrap().unwrap(), &a));
        assert_eq!(a.used(), 0);
    }

    #[test]
    fn write_accounts_true_size() {
        let dir = tempfile::tempdir().unwrap();
        let tier = loc(dir.path(), "t", 2048 * MIB, 0);
        let block = vec![0u8; (64 * MIB) as usize];
        let rec = tier.write_block(BlockKey::new(0, 0), &block).unwrap();
        assert_eq!(tier.used(), 64 * MIB);
        assert_eq!(rec.state, BlockState::Cached);
        assert_eq!(fs::metadata(rec.path()).unwrap().len(), 64 * MIB);

        tier.write_block(BlockKey::new(0, 1), &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(tier.used(), 64 * MIB + 5);
    }

    #[test]
    fn write_beyond_capacity_fails() {
        let dir = tempfile::tempdir().unwrap();
        let tier = loc(dir.path(), "t", 10, 0);
        tier.write_block(BlockKey::new(0, 0), &[0; 8]).unwrap();
        let err = tier.write_block(BlockKey::new(0, 1), &[0; 3]).unwrap_err();
        assert!(matches!(err, Error::StorageFull { requested: 3, used: 8, capacity: 10, .. }));
        assert_eq!(tier.used(), 8);
        assert!(!tier.block_path(BlockKey::new(0, 1)).exists());
    }

    #[test]
    fn failed_fill_releases_reservation() {
        let dir = tempfile::tempdir().unwrap();
        let tier = loc(dir.path(), "t", 100, 0);
        let key = BlockKey::new(0, 0);
        let err = tier.write_block_with(key, 50, |_| Err(Error::Transport("boom".into())));
        assert!(err.is_err());
        assert_eq!(tier.used(), 0);
        assert!(!tier.block_path(key).exists());
        let short = tier.write_block_with(key, 50, |f| {
            f.write_all(&[0; 10])?;
            Ok(10)
        });
        assert!(matches!(short, Err(Error::Internal(_))));
        assert_eq!(tier.used(), 0);
    }

    #[test]
    fn verify_used_reclaims_deleted_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let tier = loc(dir.path(), "t", 1000, 0);
        let sizes = [10u64, 20, 30, 40, 50];
        let keys: Vec<_> = (0..5).map(|i| BlockKey::new(0, i)).collect();
        for (k, s) in keys.iter().zip(sizes) {
            tier.write_block(*k, &vec![0; s as usize]).unwrap();
        }
        assert_eq!(tier.verify_used(&keys).unwrap(), 0);
        assert_eq!(tier.used(), 150);

        for i in [0, 2, 4] {
            fs::remove_file(tier.block_path(keys[i])).unwrap();
        }
        assert_eq!(tier.verify_used(&keys).unwrap(), 10 + 30 + 50);
        assert_eq!(tier.used(), 60);
        assert_eq!(tier.used(), tier.bytes_on_disk().unwrap());

        // Reclaimed keys are not counted twice.
        assert_eq!(tier.verify_used(&keys).unwrap(), 0);

        for i in [1, 3] {
            fs::remove_file(tier.block_path(keys[i])).unwrap();
        }
        tier.reclaim().unwrap();
        assert_eq!(tier.used(), 0);
    }

    #[test]
    fn verify_used_reports_missing_directory() {
        let dir = tempfile::tempdir().unwrap();
        let tier = loc(dir.path(), "t", 1000, 0);
        fs::remove_dir(tier.path()).unwrap();
        assert!(matches!(tier.verify_used(&[]), Err(Error::Io(_))));
    }

    #[test]
    fn state_transitions_are_forward_only() {
        let dir = tempfile::tempdir().unwrap();
        let tier = loc(dir.path(), "t", 100, 0);
        let mut rec = tier.write_block(BlockKey::new(0, 0), &[1]).unwrap();
        assert!(rec.transition(BlockState::Evicted).is_err());
        rec.transition(BlockState::MarkedEvict).unwrap();
        assert!(rec.transition(BlockState::Cached).is_err());
        rec.transition(BlockState::Evicted).unwrap();
        assert!(rec.transition(BlockState::Evicted).is_err());
    }

    #[test]
    fn tier_specs() {
        let specs = parse_tier_list("/dev/shm/a:1024, /tmp/b:c:2048").unwrap();
        assert_eq!(specs[0], TierSpec { path: "/dev/shm/a".into(), capacity: 1024 });
        assert_eq!(specs[1], TierSpec { path: "/tmp/b:c".into(), capacity: 2048 });
        assert!("nocolon".parse::<TierSpec>().is_err());
        assert!("/x:lots".parse::<TierSpec>().is_err());
    }

    #[test]
    fn duplicate_priorities_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tiers = vec![loc(dir.path(), "a", 1, 1), loc(dir.path(), "b", 1, 1)];
        assert!(matches!(order_tiers(tiers), Err(Error::StorageConfig(_))));
        let tiers = vec![loc(dir.path(), "a", 1, 2), loc(dir.path(), "b", 1, 0)];
        let ordered = order_tiers(tiers).unwrap();
        assert_eq!(ordered[0].priority(), 0);
    }
}
