//! The application-facing stream over a [`FileSet`].
//!
//! Opening a stream starts a prefetch worker and an evictor. Reads are served
//! from cached blocks, waiting for the worker when the next block has not
//! arrived yet. A block is marked for eviction as soon as its last byte has
//! been returned. Reading behind the eviction frontier (after a backward seek)
//! falls back to direct range requests.

use std::fs::File;
use std::io::{self, BufReader, Read, Seek, SeekFrom};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::cache::{order_tiers, BlockKey, BlockState, CacheLocation};
use crate::error::{Error, Result};
use crate::evict::{run_evictor, EvictionPlan, EvictionReport, DEFAULT_EVICT_INTERVAL};
use crate::prefetch::{
    run_prefetch, validate_tiers, FileSet, Outcome, PrefetchOptions, PrefetchReport, PrefetchState,
};
use crate::store::ObjectRef;

#[derive(Debug, Clone)]
pub struct StreamOptions {
    pub prefetch: PrefetchOptions,
    pub evict_interval: Duration,
    /// Size of the in-memory window used to serve small reads from a cached block.
    pub window: usize,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions {
            prefetch: PrefetchOptions::default(),
            evict_interval: DEFAULT_EVICT_INTERVAL,
            window: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadCounters {
    /// Blocks that were already cached when the reader reached them.
    pub cache_hits: u64,
    /// Blocks the reader had to wait for.
    pub waits: u64,
    /// Blocks served by direct range requests instead of the cache.
    pub fallback_reads: u64,
    pub bytes_read: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ReadReport {
    pub counters: ReadCounters,
    pub wall_time: Duration,
    pub prefetch: PrefetchReport,
    pub prefetch_error: Option<String>,
    pub eviction: EvictionReport,
    /// Sum over locations of the highest `used` value reached.
    pub peak_cache_used: u64,
}

enum Source {
    Cache { reader: BufReader<File>, offset: u64 },
    Memory(Vec<u8>),
}

struct ActiveBlock {
    key: BlockKey,
    start: u64,
    len: u64,
    source: Source,
    /// Whether finishing this block should mark it for eviction.
    from_cache: bool,
}

impl ActiveBlock {
    fn end(&self) -> u64 {
        self.start + self.len
    }

    fn read_at(&mut self, within: u64, buf: &mut [u8]) -> io::Result<()> {
        match &mut self.source {
            Source::Memory(data) => {
                let at = within as usize;
                buf.copy_from_slice(&data[at..at + buf.len()]);
            }
            Source::Cache { reader, offset } => {
                if *offset != within {
                    reader.seek_relative(within as i64 - *offset as i64)?;
                }
                reader.read_exact(buf)?;
                *offset = within + buf.len() as u64;
            }
        }
        Ok(())
    }
}

pub struct StreamHandle {
    fs: FileSet,
    tiers: Vec<Arc<CacheLocation>>,
    state: Arc<PrefetchState>,
    position: u64,
    active: Option<ActiveBlock>,
    counters: ReadCounters,
    window: usize,
    opened: Instant,
    prefetch_worker: Option<JoinHandle<Result<PrefetchReport>>>,
    evict_worker: Option<JoinHandle<Result<EvictionReport>>>,
    report: Option<ReadReport>,
}

impl StreamHandle {
    /// Validates the cache configuration and starts the prefetch and eviction workers.
    pub fn open(fs: FileSet, tiers: Vec<Arc<CacheLocation>>, opts: StreamOptions) -> Result<Self> {
        let tiers = order_tiers(tiers)?;
        let largest = tiers.iter().map(|t| t.capacity()).max().unwrap_or(0);
        if fs.blocksize() > largest {
            return Err(Error::StorageConfig(format!(
                "blocksize {} exceeds the largest cache location ({largest} bytes)",
                fs.blocksize()
            )));
        }
        validate_tiers(&fs, &tiers)?;

        let state = PrefetchState::new(&fs);
        let plan = EvictionPlan::new(&fs, &tiers, opts.evict_interval);
        let prefetch_worker = {
            let (fs, tiers, state, popts) = (fs.clone(), tiers.clone(), state.clone(), opts.prefetch.clone());
            thread::Builder::new()
                .name("rollread-prefetch".into())
                .spawn(move || run_prefetch(&fs, &tiers, &state, &popts))?
        };
        let evict_worker = {
            let state = state.clone();
            thread::Builder::new()
                .name("rollread-evict".into())
                .spawn(move || run_evictor(&plan, &state))?
        };
        Ok(StreamHandle {
            fs,
            tiers,
            state,
            position: 0,
            active: None,
            counters: ReadCounters::default(),
            window: opts.window.max(1),
            opened: Instant::now(),
            prefetch_worker: Some(prefetch_worker),
            evict_worker: Some(evict_worker),
            report: None,
        })
    }

    /// Convenience for building the [`FileSet`] and tiers in one call.
    pub fn open_refs(
        refs: Vec<ObjectRef>,
        blocksize: u64,
        tiers: Vec<Arc<CacheLocation>>,
        opts: StreamOptions,
    ) -> Result<Self> {
        StreamHandle::open(FileSet::new(refs, blocksize)?, tiers, opts)
    }

    pub fn file_set(&self) -> &FileSet {
        &self.fs
    }

    pub fn tiers(&self) -> &[Arc<CacheLocation>] {
        &self.tiers
    }

    pub fn state(&self) -> &Arc<PrefetchState> {
        &self.state
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn total_size(&self) -> u64 {
        self.fs.total_size()
    }

    pub fn counters(&self) -> ReadCounters {
        self.counters
    }

    pub fn is_closed(&self) -> bool {
        self.report.is_some()
    }

    /// Reads up to `n` bytes; fewer only at the end of the stream.
    pub fn read_chunk(&mut self, n: usize) -> Result<Vec<u8>> {
        let want = (n as u64).min(self.total_size() - self.position) as usize;
        let mut buf = vec![0u8; want];
        let got = self.read_into(&mut buf)?;
        buf.truncate(got);
        Ok(buf)
    }

    /// Fills `buf` from the current position, stitching across block and file
    /// boundaries. Returns the number of bytes read, which is short only at
    /// the end of the stream.
    pub fn read_into(&mut self, buf: &mut [u8]) -> Result<usize> {
        if self.report.is_some() {
            return Err(Error::Closed);
        }
        let mut filled = 0;
        while filled < buf.len() && self.position < self.total_size() {
            let position = self.position;
            let block = self.active_block()?;
            let within = position - block.start;
            let n = ((block.end() - position) as usize).min(buf.len() - filled);
            block.read_at(within, &mut buf[filled..filled + n])?;
            filled += n;
            self.position += n as u64;
            self.counters.bytes_read += n as u64;
            self.finish_block_if_consumed()?;
        }
        Ok(filled)
    }

    /// Moves to `offset`. Forward moves consume the skipped bytes without
    /// copying them; backward moves make the affected blocks come from direct
    /// range requests.
    pub fn seek_to(&mut self, offset: u64) -> Result<()> {
        if self.report.is_some() {
            return Err(Error::Closed);
        }
        let total = self.total_size();
        if offset > total {
            return Err(Error::OutOfRange { offset, size: total });
        }
        if offset < self.position {
            if self.active.as_ref().is_some_and(|b| offset < b.start) {
                self.active = None;
            }
            self.position = offset;
            return Ok(());
        }
        while self.position < offset {
            let end = self.active_block()?.end();
            self.position = end.min(offset);
            self.finish_block_if_consumed()?;
        }
        Ok(())
    }

    fn finish_block_if_consumed(&mut self) -> Result<()> {
        let Some(block) = &self.active else {
            return Ok(());
        };
        if self.position < block.end() {
            return Ok(());
        }
        let block = self.active.take().unwrap();
        if block.from_cache {
            let mut inner = self.state.lock();
            if let Some(rec) = inner.records.get_mut(&block.key) {
                if rec.state == BlockState::Cached {
                    rec.transition(BlockState::MarkedEvict)?;
                    inner.pending_evict.push_back(block.key);
                }
            }
        }
        Ok(())
    }

    fn active_block(&mut self) -> Result<&mut ActiveBlock> {
        let (key, _) = self
            .fs
            .locate(self.position)
            .ok_or_else(|| Error::Internal(format!("position {} is past the end", self.position)))?;
        if self.active.as_ref().map(|b| b.key) != Some(key) {
            self.active = Some(self.load_block(key)?);
        }
        Ok(self.active.as_mut().unwrap())
    }

    fn load_block(&mut self, key: BlockKey) -> Result<ActiveBlock> {
        let start = self.fs.block_start(key);
        let len = self.fs.block_len(key);
        let mut waited = false;
        let cached = {
            let mut inner = self.state.lock();
            loop {
                match inner.records.get(&key).map(|r| (r.state, r.path())) {
                    Some((BlockState::Cached, path)) => break Some(path),
                    Some((BlockState::MarkedEvict | BlockState::Evicted, _)) => break None,
                    _ => {}
                }
                match &inner.outcome {
                    Some(Outcome::Failed { key: failed, reason }) => {
                        return Err(Error::PrefetchFailed {
                            key: *failed,
                            reason: reason.clone(),
                        });
                    }
                    Some(Outcome::Stopped) => return Err(Error::Closed),
                    Some(Outcome::Complete) => {
                        return Err(Error::Internal(format!("block {key} missing after prefetch completed")));
                    }
                    None => {}
                }
                waited = true;
                inner = self.state.wait(inner);
            }
        };

        if let Some(path) = cached {
            match File::open(&path) {
                Ok(file) => {
                    if waited {
                        self.counters.waits += 1;
                    } else {
                        self.counters.cache_hits += 1;
                    }
                    let window = self.window.min(len as usize).max(1);
                    return Ok(ActiveBlock {
                        key,
                        start,
                        len,
                        source: Source::Cache {
                            reader: BufReader::with_capacity(window, file),
                            offset: 0,
                        },
                        from_cache: true,
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    log::warn!("cached block {key} vanished, fetching it directly");
                }
                Err(e) => return Err(e.into()),
            }
        }

        let (offset, length) = self.fs.block_range(key);
        let data = self.fs.refs()[key.file_index].get_range(offset, length)?;
        self.counters.fallback_reads += 1;
        Ok(ActiveBlock {
            key,
            start,
            len,
            source: Source::Memory(data),
            from_cache: false,
        })
    }

    /// Stops both workers, removes every remaining block file and returns
    /// the run's statistics. Calling it again returns the same report.
    pub fn close(&mut self) -> Result<ReadReport> {
        if let Some(report) = &self.report {
            return Ok(report.clone());
        }
        self.active = None;
        self.state.stop();
        let (prefetch, prefetch_error) = match self.prefetch_worker.take().map(JoinHandle::join) {
            Some(Ok(Ok(report))) => (report, None),
            Some(Ok(Err(e))) => (PrefetchReport::default(), Some(e.to_string())),
            Some(Err(_)) => (PrefetchReport::default(), Some("prefetch worker panicked".into())),
            None => (PrefetchReport::default(), None),
        };
        {
            let mut inner = self.state.lock();
            inner.shutdown = true;
            self.state.notify();
        }
        let eviction = match self.evict_worker.take().map(JoinHandle::join) {
            Some(Ok(result)) => result,
            Some(Err(_)) => Err(Error::Internal("evictor panicked".into())),
            None => Ok(EvictionReport::default()),
        };
        let report = ReadReport {
            counters: self.counters,
            wall_time: self.opened.elapsed(),
            prefetch,
            prefetch_error,
            eviction: eviction.as_ref().cloned().unwrap_or_default(),
            peak_cache_used: self.tiers.iter().map(|t| t.peak_used()).sum(),
        };
        self.report = Some(report.clone());
        eviction.map(|_| report)
    }
}

impl Drop for StreamHandle {
    fn drop(&mut self) {
        if self.report.is_none() {
            if let Err(e) = self.close() {
                log::warn!("closing stream: {e}");
            }
        }
    }
}

impl Read for StreamHandle {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.read_into(buf).map_err(Into::into)
    }
}

impl Seek for StreamHandle {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let target = match pos {
            SeekFrom::Start(o) => Some(o),
            SeekFrom::Current(d) => self.position.checked_add_signed(d),
            SeekFrom::End(d) => self.total_size().checked_add_signed(d),
        }
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "seek before start"))?;
        self.seek_to(target)?;
        Ok(self.position)
    }
}
