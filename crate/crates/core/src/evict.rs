//! The eviction worker: deletes consumed blocks between sleeps and removes
//! whatever is left when the stream shuts down.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::cache::{BlockKey, BlockState, CacheLocation};
use crate::error::{Error, Result};
use crate::prefetch::{FileSet, PrefetchState};

pub const DEFAULT_EVICT_INTERVAL: Duration = Duration::from_secs(5);

/// Every block path a stream over `fs` can create, across all locations.
pub fn get_all_blocks(fs: &FileSet, tiers: &[Arc<CacheLocation>]) -> Vec<PathBuf> {
    let mut seen = HashSet::new();
    tiers
        .iter()
        .flat_map(|t| fs.keys().map(move |k| t.block_path(k)))
        .filter(|p| seen.insert(p.clone()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvictionPlan {
    pub all_blocks: Vec<PathBuf>,
    pub interval: Duration,
}

impl EvictionPlan {
    pub fn new(fs: &FileSet, tiers: &[Arc<CacheLocation>], interval: Duration) -> Self {
        EvictionPlan {
            all_blocks: get_all_blocks(fs, tiers),
            interval,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvictionReport {
    pub sweeps: u64,
    /// Blocks deleted after being marked by the reader.
    pub evicted: u64,
    /// Leftover blocks deleted by the final sweep.
    pub swept: u64,
    /// Every path unlinked, in order.
    pub unlinked: Vec<PathBuf>,
    /// Deletion failures seen during regular sweeps.
    pub errors: Vec<String>,
}

fn remove(path: &PathBuf) -> io::Result<bool> {
    match fs::remove_file(path) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(e),
    }
}

/// Runs until the shared state signals shutdown, then performs the final sweep.
pub fn run_evictor(plan: &EvictionPlan, state: &PrefetchState) -> Result<EvictionReport> {
    let mut report = EvictionReport::default();
    let mut removed: HashSet<PathBuf> = HashSet::new();
    loop {
        let (batch, shutdown) = {
            let mut guard = state.lock();
            let inner = &mut *guard;
            let batch: Vec<(BlockKey, PathBuf)> = inner
                .pending_evict
                .drain(..)
                .filter_map(|k| inner.records.get(&k).map(|r| (k, r.path())))
                .collect();
            (batch, inner.shutdown)
        };
        report.sweeps += 1;
        let mut done = Vec::with_capacity(batch.len());
        for (key, path) in batch {
            if removed.contains(&path) {
                continue;
            }
            match remove(&path) {
                Ok(unlinked) => {
                    if unlinked {
                        report.evicted += 1;
                        report.unlinked.push(path.clone());
                    }
                    removed.insert(path);
                    done.push(key);
                }
                Err(e) => {
                    log::warn!("evicting {}: {e}", path.display());
                    report.errors.push(format!("{}: {e}", path.display()));
                }
            }
        }
        if !done.is_empty() {
            let mut inner = state.lock();
            for key in done {
                if let Some(rec) = inner.records.get_mut(&key) {
                    if rec.state == BlockState::MarkedEvict {
                        rec.state = BlockState::Evicted;
                    }
                }
            }
            state.notify();
        }
        if shutdown {
            break;
        }
        let deadline = Instant::now() + plan.interval;
        let mut inner = state.lock();
        while !inner.shutdown {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            inner = state.wait_timeout(inner, deadline - now);
        }
    }

    let mut failures = Vec::new();
    for path in &plan.all_blocks {
        if removed.contains(path) {
            continue;
        }
        match remove(path) {
            Ok(true) => {
                report.swept += 1;
                report.unlinked.push(path.clone());
                removed.insert(path.clone());
            }
            Ok(false) => {}
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    {
        let mut inner = state.lock();
        for rec in inner.records.values_mut() {
            if rec.state == BlockState::Cached {
                rec.state = BlockState::MarkedEvict;
            }
            if rec.state == BlockState::MarkedEvict {
                rec.state = BlockState::Evicted;
            }
        }
        state.notify();
    }
    if !failures.is_empty() {
        return Err(Error::Io(io::Error::other(format!(
            "final sweep could not remove {} block(s): {}",
            failures.len(),
            failures.join("; ")
        ))));
    }
    Ok(report)
}
