use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use super::ObjectStore;
use crate::error::{Error, Result};

/// Default simulated cloud latency for desk-scale runs.
pub const DEFAULT_LATENCY: f64 = 0.010;
/// Default simulated cloud bandwidth for desk-scale runs, in bytes per second.
pub const DEFAULT_BANDWIDTH: f64 = 200e6;

const PACE_CHUNK: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SimStoreParams {
    /// Per-request latency in seconds.
    pub latency: f64,
    /// Read bandwidth in bytes per second.
    pub bandwidth: f64,
    pub backing_dir: PathBuf,
}

impl SimStoreParams {
    pub fn new(backing_dir: impl Into<PathBuf>, latency: f64, bandwidth: f64) -> Result<Self> {
        let params = SimStoreParams {
            latency,
            bandwidth,
            backing_dir: backing_dir.into(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "simulated latency must be finite and >= 0, got {}",
                self.latency
            )));
        }
        if self.bandwidth.is_nan() || self.bandwidth <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "simulated bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    pub fn to_uri(&self) -> String {
        format!(
            "sim://{}?latency={}&bandwidth={}",
            self.backing_dir.display(),
            self.latency,
            self.bandwidth
        )
    }
}

/// Time the simulated store charges for one request of `nbytes`:
/// `latency + nbytes / bandwidth`, in seconds.
pub fn sim_delay(params: &SimStoreParams, nbytes: u64) -> f64 {
    params.latency + nbytes as f64 / params.bandwidth
}

/// A cloud store stand-in backed by a local directory.
///
/// Every range request sleeps so that its wall time is `sim_delay` of the
/// bytes it returns. Payload bytes are delivered progressively at the
/// configured bandwidth, so a consumer streaming them to disk overlaps its
/// writes with the simulated transfer.
#[derive(Debug, Clone)]
pub struct SimStore {
    params: SimStoreParams,
}

impl SimStore {
    pub fn new(params: SimStoreParams) -> Result<Self> {
        params.validate()?;
        Ok(SimStore { params })
    }

    /// Parses `sim://<dir>[?latency=<seconds>&bandwidth=<bytes/s>]`.
    pub fn from_uri(uri: &str) -> Result<Self> {
        let rest = uri
            .strip_prefix("sim://")
            .ok_or_else(|| Error::UnsupportedUri(uri.to_string()))?;
        let (dir, query) = match rest.split_once('?') {
            Some((dir, query)) => (dir, query),
            None => (rest, ""),
        };
        if dir.is_empty() {
            return Err(Error::UnsupportedUri(format!("{uri}: missing backing directory")));
        }
        let mut latency = DEFAULT_LATENCY;
        let mut bandwidth = DEFAULT_BANDWIDTH;
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::UnsupportedUri(format!("{uri}: malformed query `{pair}`")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::UnsupportedUri(format!("{uri}: bad number `{value}`")))?;
            match name {
                "latency" => latency = value,
                "bandwidth" => bandwidth = value,
                _ => return Err(Error::UnsupportedUri(format!("{uri}: unknown parameter `{name}`"))),
            }
        }
        SimStore::new(SimStoreParams::new(dir, latency, bandwidth)?)
    }

    pub fn params(&self) -> &SimStoreParams {
        &self.params
    }

    fn object_path(&self, key: &str) -> Result<PathBuf> {
        let rel = Path::new(key);
        let safe = !key.is_empty()
            && rel
                .components()
                .all(|c| matches!(c, Component::Normal(_)));
        if !safe {
            return Err(Error::InvalidArgument(format!("invalid object key `{key}`")));
        }
        Ok(self.params.backing_dir.join(rel))
    }

    fn open(&self, key: &str) -> Result<File> {
        let path = self.object_path(key)?;
        match File::open(&path) {
            Ok(f) if f.metadata()?.is_file() => Ok(f),
            Ok(_) => Err(Error::NotFound(key.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(Error::NotFound(key.to_string())),
            Err(e) => Err(e.into()),
        }
    }
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

impl ObjectStore for SimStore {
    fn uri(&self) -> String {
        self.params.to_uri()
    }

    fn object_size(&self, key: &str) -> Result<u64> {
        Ok(self.open(key)?.metadata()?.len())
    }

    fn read_range_into(
        &self,
        key: &str,
        offset: u64,
        length: u64,
        sink: &mut dyn Write,
    ) -> Result<u64> {
        let start = Instant::now();
        let mut file = self.open(key)?;
        let size = file.metadata()?.len();
        if offset >= size {
            return Err(Error::OutOfRange { offset, size });
        }
        let total = length.min(size - offset);
        let latency = Duration::from_secs_f64(self.params.latency);
        let bandwidth = self.params.bandwidth;

        sleep_until(start + latency);
        file.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; PACE_CHUNK.min(total as usize)];
        let mut sent = 0u64;
        while sent < total {
            let want = ((total - sent) as usize).min(buf.len());
            file.read_exact(&mut buf[..want])?;
            sink.write_all(&buf[..want])?;
            sent += want as u64;
            sleep_until(start + latency + Duration::from_secs_f64(sent as f64 / bandwidth));
        }
        Ok(sent)
    }

    fn list_keys(&self, prefix: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        collect_keys(&self.params.backing_dir, "", &mut keys)?;
        keys.retain(|k| k.starts_with(prefix));
        keys.sort();
        Ok(keys)
    }
}

fn collect_keys(dir: &Path, rel: &str, out: &mut Vec<String>) -> Result<()> {
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == io::ErrorKind::NotFound && rel.is_empty() => return Ok(()),
        Err(e) => return Err(Error::Transport(format!("listing {}: {e}", dir.display()))),
    };
    for entry in entries {
        let entry = entry?;
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
            continue;
        };
        let key = if rel.is_empty() { name } else { format!("{rel}/{name}") };
        let ty = entry.file_type()?;
        if ty.is_dir() {
            collect_keys(&entry.path(), &key, out)?;
        } else if ty.is_file() {
            out.push(key);
        }
    }
    Ok(())
}
