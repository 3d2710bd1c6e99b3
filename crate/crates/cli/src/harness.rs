//! Timed end-to-end runs of one workload in one mode.

use std::fmt;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rollread_core::model::ModelParams;
use rollread_core::{
    build_tiers, FileSet, ObjectRef, ObjectStore, PrefetchOptions, StreamHandle, StreamOptions, TierSpec,
};
use serde::Serialize;
use xxhash_rust::xxh3::Xxh3;

use crate::compute::SyntheticCompute;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fetch a block, then process it; no overlap.
    Sequential,
    /// Read through a rolling-prefetch stream.
    Rolling,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::Rolling => "rolling",
        })
    }
}

/// An ordered list of objects plus the digest a correct run must reproduce.
#[derive(Debug, Clone)]
pub struct Workload {
    pub refs: Vec<ObjectRef>,
    pub total_bytes: u64,
    /// xxh3-128 of the concatenated objects.
    pub digest: u128,
}

impl Workload {
    /// Resolves sizes and computes the reference digest. With `local_root`
    /// the digest is taken from the files under it (the simulated store's
    /// backing directory); otherwise each object is downloaded whole.
    pub fn open(store: &Arc<dyn ObjectStore>, keys: &[String], local_root: Option<&Path>) -> Result<Self> {
        let refs = keys
            .iter()
            .map(|k| ObjectRef::new(store.clone(), k.clone()))
            .collect::<rollread_core::Result<Vec<_>>>()?;
        let mut hasher = Xxh3::new();
        let mut total_bytes = 0;
        for r in &refs {
            let size = r.size()?;
            total_bytes += size;
            match local_root {
                Some(root) => {
                    io::copy(&mut File::open(root.join(r.key()))?, &mut HashSink(&mut hasher))?;
                }
                None if size > 0 => {
                    r.read_range_into(0, size, &mut HashSink(&mut hasher))?;
                }
                None => {}
            }
        }
        Ok(Workload {
            refs,
            total_bytes,
            digest: hasher.digest128(),
        })
    }

    pub fn n_files(&self) -> usize {
        self.refs.len()
    }

    pub fn file_set(&self, blocksize: u64) -> Result<FileSet> {
        Ok(FileSet::new(self.refs.clone(), blocksize)?)
    }

    /// Model inputs for this workload split at `blocksize`.
    pub fn model_params(&self, blocksize: u64, compute_rate: f64, latency: f64, bandwidth: f64) -> Result<ModelParams> {
        let blocks = self.file_set(blocksize)?.block_count().max(1);
        Ok(ModelParams::new(blocks, self.total_bytes as f64, latency, bandwidth, compute_rate))
    }
}

struct HashSink<'a>(&'a mut Xxh3);

impl io::Write for HashSink<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub blocksize: u64,
    /// Seconds of synthetic compute per byte.
    pub compute_rate: f64,
    /// Cache locations for rolling runs. Each run works in a fresh
    /// subdirectory of every location.
    pub tiers: Vec<TierSpec>,
    pub evict_interval: Duration,
    pub prefetch: PrefetchOptions,
    pub read_size: usize,
}

impl RunSpec {
    pub fn cache_bytes(&self) -> u64 {
        self.tiers.iter().map(|t| t.capacity).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub mode: Mode,
    pub wall_time: f64,
    pub n_blocks: u64,
    pub bytes_read: u64,
    pub waits: u64,
    pub cache_hits: u64,
    pub fallback_reads: u64,
    pub peak_cache_used: u64,
    /// Byte count and digest matched the workload.
    pub ok: bool,
    pub error: Option<String>,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn run_dirs(tiers: &[TierSpec]) -> Vec<TierSpec> {
    let id = RUN_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = format!("run-{}-{id}", std::process::id());
    tiers
        .iter()
        .map(|t| TierSpec {
            path: t.path.join(&name),
            capacity: t.capacity,
        })
        .collect()
}

struct Outcome {
    n_blocks: u64,
    consumed: SyntheticCompute,
    waits: u64,
    cache_hits: u64,
    fallback_reads: u64,
    peak_cache_used: u64,
}

fn sequential(w: &Workload, spec: &RunSpec) -> Result<Outcome> {
    let fs = w.file_set(spec.blocksize)?;
    let mut consumed = SyntheticCompute::new(spec.compute_rate);
    for key in fs.keys() {
        let (offset, length) = fs.block_range(key);
        let data = fs.refs()[key.file_index].get_range(offset, length)?;
        consumed.consume(&data);
    }
    Ok(Outcome {
        n_blocks: fs.block_count(),
        consumed,
        waits: 0,
        cache_hits: 0,
        fallback_reads: 0,
        peak_cache_used: 0,
    })
}

fn rolling(w: &Workload, spec: &RunSpec, dirs: &[PathBuf]) -> Result<Outcome> {
    let fs = w.file_set(spec.blocksize)?;
    let n_blocks = fs.block_count();
    let specs: Vec<TierSpec> = dirs
        .iter()
        .zip(&spec.tiers)
        .map(|(p, t)| TierSpec {
            path: p.clone(),
            capacity: t.capacity,
        })
        .collect();
    let opts = StreamOptions {
        evict_interval: spec.evict_interval,
        prefetch: spec.prefetch.clone(),
        ..StreamOptions::default()
    };
    let mut stream = StreamHandle::open(fs, build_tiers(&specs)?, opts)?;
    let mut consumed = SyntheticCompute::new(spec.compute_rate);
    let mut buf = vec![0u8; spec.read_size.max(1)];
    loop {
        let n = stream.read_into(&mut buf)?;
        if n == 0 {
            break;
        }
        consumed.consume(&buf[..n]);
    }
    let report = stream.close()?;
    Ok(Outcome {
        n_blocks,
        consumed,
        waits: report.counters.waits,
        cache_hits: report.counters.cache_hits,
        fallback_reads: report.counters.fallback_reads,
        peak_cache_used: report.peak_cache_used,
    })
}

/// Runs the workload once in `mode` and times it end to end, including
/// stream setup and teardown for rolling runs.
pub fn run_mode(w: &Workload, spec: &RunSpec, mode: Mode) -> BenchResult {
    let dirs: Vec<PathBuf> = run_dirs(&spec.tiers).into_iter().map(|t| t.path).collect();
    let start = Instant::now();
    let outcome = match mode {
        Mode::Sequential => sequential(w, spec),
        Mode::Rolling => rolling(w, spec, &dirs),
    };
    let wall_time = start.elapsed().as_secs_f64();
    if mode == Mode::Rolling {
        for d in &dirs {
            if let Err(e) = std::fs::remove_dir_all(d) {
                if e.kind() != io::ErrorKind::NotFound {
                    log::warn!("removing {}: {e}", d.display());
                }
            }
        }
    }
    match outcome {
        Ok(o) => {
            let bytes_read = o.consumed.bytes();
            let ok = bytes_read == w.total_bytes && o.consumed.digest() == w.digest;
            BenchResult {
                mode,
                wall_time,
                n_blocks: o.n_blocks,
                bytes_read,
                waits: o.waits,
                cache_hits: o.cache_hits,
                fallback_reads: o.fallback_reads,
                peak_cache_used: o.peak_cache_used,
                ok,
                error: (!ok).then(|| {
                    format!(
                        "consumed {bytes_read} of {} bytes with {} digest",
                        w.total_bytes,
                        if o.consumed.digest() == w.digest { "matching" } else { "mismatched" }
                    )
                }),
            }
        }
        Err(e) => BenchResult {
            mode,
            wall_time,
            n_blocks: 0,
            bytes_read: 0,
            waits: 0,
            cache_hits: 0,
            fallback_reads: 0,
            peak_cache_used: 0,
            ok: false,
            error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rollread_core::{SimStore, SimStoreParams};

    fn setup(latency: f64) -> (tempfile::TempDir, Arc<dyn ObjectStore>, Workload) {
        let dir = tempfile::tempdir().unwrap();
        let store: Arc<dyn ObjectStore> =
            Arc::new(SimStore::new(SimStoreParams::new(dir.path(), latency, 1e9).unwrap()).unwrap());
        let keys: Vec<String> = (0..3).map(|i| format!("o{i}")).collect();
        for (i, k) in keys.iter().enumerate() {
            std::fs::write(dir.path().join(k), vec![i as u8 + 1; 100_000 + i * 777]).unwrap();
        }
        let w = Workload::open(&store, &keys, Some(dir.path())).unwrap();
        (dir, store, w)
    }

    fn spec(dir: &Path, compute_rate: f64) -> RunSpec {
        RunSpec {
            blocksize: 32 * 1024,
            compute_rate,
            tiers: vec![TierSpec {
                path: dir.join("cache"),
                capacity: 128 * 1024,
            }],
            evict_interval: Duration::from_millis(10),
            prefetch: PrefetchOptions::default(),
            read_size: 10_000,
        }
    }

    #[test]
    fn both_modes_consume_everything() {
        let (dir, store, w) = setup(0.0);
        assert_eq!(w.total_bytes, 300_000 + 777 * 3);
        let remote = Workload::open(&store, &["o0".into(), "o1".into(), "o2".into()], None).unwrap();
        assert_eq!(remote.digest, w.digest);
        for mode in [Mode::Sequential, Mode::Rolling] {
            let r = run_mode(&w, &spec(dir.path(), 0.0), mode);
            assert!(r.ok, "{r:?}");
            assert_eq!(r.bytes_read, w.total_bytes);
            assert_eq!(r.n_blocks, 4 + 4 + 4);
            assert!(r.wall_time > 0.0);
        }
        assert_eq!(std::fs::read_dir(dir.path().join("cache")).unwrap().count(), 0);
    }

    #[test]
    fn failures_are_reported_not_raised() {
        let (dir, _store, w) = setup(0.0);
        std::fs::remove_file(dir.path().join("o1")).unwrap();
        let mut s = spec(dir.path(), 0.0);
        s.blocksize = 1 << 20;
        let fresh = Workload {
            refs: w
                .refs
                .iter()
                .map(|r| ObjectRef::new(r.store().clone(), r.key()).unwrap())
                .collect(),
            ..w.clone()
        };
        for mode in [Mode::Sequential, Mode::Rolling] {
            let r = run_mode(&fresh, &s, mode);
            assert!(!r.ok);
            assert!(r.error.is_some());
        }
    }

    #[test]
    fn rolling_overlaps_transfer_and_compute() {
        // 12 blocks of ~32 KiB: 5 ms latency each, compute matched to it.
        let (dir, _store, w) = setup(0.005);
        let rate = (0.005 + 32768.0 / 1e9) / 32768.0;
        let s = spec(dir.path(), rate);
        let seq = run_mode(&w, &s, Mode::Sequential);
        let roll = run_mode(&w, &s, Mode::Rolling);
        assert!(seq.ok && roll.ok);
        let speedup = seq.wall_time / roll.wall_time;
        assert!(speedup > 1.3 && speedup < 2.0, "{speedup}");
    }
}
