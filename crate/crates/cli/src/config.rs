//! Settings shared by every benchmark command.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rollread_core::store::{DEFAULT_BANDWIDTH, DEFAULT_LATENCY};
use rollread_core::{PrefetchOptions, SimStore, SimStoreParams, TierSpec};
use serde::Deserialize;

use crate::error::{HarnessError, Result};

pub const MIB: u64 = 1 << 20;
/// Smallest accepted blocksize.
pub const MIN_BLOCKSIZE: u64 = 4096;
/// Eviction interval used by the benchmarks. Desk-scale runs last seconds,
/// so the library's 5 s default would leave consumed blocks in place for
/// most of a run.
pub const BENCH_EVICT_INTERVAL: Duration = Duration::from_millis(250);

/// Parses sizes such as `4096`, `64MiB`, `1GiB` or `200MB`.
pub fn parse_bytes(s: &str) -> Result<u64> {
    let cfg = parse_size::Config::new().with_binary();
    let s = s.trim();
    // Plain numbers in scientific notation (e.g. 2e8).
    if let Ok(v) = s.parse::<f64>() {
        if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
            return Ok(v as u64);
        }
    }
    cfg.parse_size(s)
        .map_err(|e| HarnessError::Config(format!("bad size `{s}`: {e}")))
}

/// Parses a comma-separated list of sizes.
pub fn parse_byte_list(s: &str) -> Result<Vec<u64>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_bytes).collect()
}

/// Parses `path:size[,path:size...]` where sizes may carry units.
pub fn parse_tiers(s: &str) -> Result<Vec<TierSpec>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (path, size) = p
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| HarnessError::Config(format!("expected path:size, got `{p}`")))?;
            if path.is_empty() {
                return Err(HarnessError::Config(format!("empty cache path in `{p}`")));
            }
            Ok(TierSpec {
                path: PathBuf::from(path),
                capacity: parse_bytes(size)?,
            })
        })
        .collect()
}

/// Synthetic compute cost, either fixed or derived from the transfer time of
/// one block so that compute and transfer are balanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComputeRate {
    PerByte(f64),
    Matched,
}

impl ComputeRate {
    /// Seconds per byte. `Matched` gives `(latency + blocksize/bandwidth) / blocksize`.
    pub fn resolve(self, latency: f64, bandwidth: f64, blocksize: u64) -> f64 {
        match self {
            ComputeRate::PerByte(c) => c,
            ComputeRate::Matched => matched_rate(latency, bandwidth, blocksize),
        }
    }
}

pub fn matched_rate(latency: f64, bandwidth: f64, blocksize: u64) -> f64 {
    let b = blocksize as f64;
    (latency + b / bandwidth) / b
}

impl FromStr for ComputeRate {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("matched") {
            return Ok(ComputeRate::Matched);
        }
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(format!("compute rate must be a number or `matched`, got `{s}`")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(HarnessError::Config(format!("compute rate must be >= 0, got {v}")));
        }
        Ok(ComputeRate::PerByte(v))
    }
}

impl fmt::Display for ComputeRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComputeRate::PerByte(c) => write!(f, "{c}"),
            ComputeRate::Matched => f.write_str("matched"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Store URI (`sim://...` or `s3://...`).
    pub backend: String,
    pub tiers: Vec<TierSpec>,
    pub blocksize: u64,
    pub compute_rate: ComputeRate,
    pub reps: u32,
    pub seed: u64,
    pub evict_interval: Duration,
    /// Poll interval and retry policy of the prefetch worker.
    pub prefetch: PrefetchOptions,
    pub csv: Option<PathBuf>,
    /// Bytes the rolling consumer asks for per read call.
    pub read_size: usize,
}

fn default_cache_root() -> PathBuf {
    let shm = Path::new("/dev/shm");
    if shm.is_dir() {
        shm.join("rollread-cache")
    } else {
        std::env::temp_dir().join("rollread-cache")
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        let objects = std::env::temp_dir().join("rollread-objects");
        BenchConfig {
            backend: SimStoreParams {
                latency: DEFAULT_LATENCY,
                bandwidth: DEFAULT_BANDWIDTH,
                backing_dir: objects,
            }
            .to_uri(),
            tiers: vec![TierSpec {
                path: default_cache_root(),
                capacity: 256 * MIB,
            }],
            blocksize: 16 * MIB,
            compute_rate: ComputeRate::Matched,
            reps: 3,
            seed: 42,
            evict_interval: BENCH_EVICT_INTERVAL,
            prefetch: PrefetchOptions::default(),
            csv: None,
            read_size: MIB as usize,
        }
    }
}

/// Optional settings read from a TOML file; command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub backend: Option<String>,
    pub tiers: Option<String>,
    pub blocksize: Option<String>,
    pub compute_rate: Option<String>,
    pub reps: Option<u32>,
    pub seed: Option<u64>,
    #[serde(alias = "evict-interval-seconds", alias = "evict_interval_seconds")]
    pub evict_interval: Option<f64>,
    /// Seconds the prefetch worker waits before retrying when every tier is full.
    pub poll_interval: Option<f64>,
    /// Fetch attempts per block before a run fails.
    pub attempts: Option<u32>,
    pub csv: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl BenchConfig {
    pub fn apply(&mut self, f: &FileConfig) -> Result<()> {
        if let Some(v) = &f.backend {
            self.backend = v.clone();
        }
        if let Some(v) = &f.tiers {
            self.tiers = parse_tiers(v)?;
        }
        if let Some(v) = &f.blocksize {
            self.blocksize = parse_bytes(v)?;
        }
        if let Some(v) = &f.compute_rate {
            self.compute_rate = v.parse()?;
        }
        if let Some(v) = f.reps {
            self.reps = v;
        }
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = f.evict_interval {
            self.evict_interval = seconds(v)?;
        }
        if let Some(v) = f.poll_interval {
            self.prefetch.poll_interval = seconds(v)?;
        }
        if let Some(v) = f.attempts {
            if v == 0 {
                return Err(HarnessError::Config("attempts must be at least 1".into()));
            }
            self.prefetch.attempts = v;
        }
        if let Some(v) = &f.csv {
            self.csv = Some(v.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(HarnessError::Config("reps must be at least 1".into()));
        }
        if self.blocksize < MIN_BLOCKSIZE {
            return Err(HarnessError::Config(format!(
                "blocksize must be at least {MIN_BLOCKSIZE} bytes, got {}",
                self.blocksize
            )));
        }
        if let ComputeRate::PerByte(c) = self.compute_rate {
            if !(c.is_finite() && c >= 0.0) {
                return Err(HarnessError::Config(format!("compute rate must be >= 0, got {c}")));
            }
        }
        if self.tiers.is_empty() {
            return Err(HarnessError::Config("at least one cache tier is required".into()));
        }
        if self.read_size == 0 {
            return Err(HarnessError::Config("read size must be positive".into()));
        }
        Ok(())
    }

    /// Parameters of the simulated backend, if that is what is configured.
    pub fn sim_params(&self) -> Option<SimStoreParams> {
        SimStore::from_uri(&self.backend).ok().map(|s| s.params().clone())
    }

    /// Latency and bandwidth fed to the timing model: the simulated store's
    /// own values, or the desk-scale defaults for real backends.
    pub fn model_link(&self) -> (f64, f64) {
        self.sim_params()
            .map(|p| (p.latency, p.bandwidth))
            .unwrap_or((DEFAULT_LATENCY, DEFAULT_BANDWIDTH))
    }

    pub fn resolved_compute_rate(&self, blocksize: u64) -> f64 {
        let (l, b) = self.model_link();
        self.compute_rate.resolve(l, b, blocksize)
    }
}

pub fn seconds(v: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(v).map_err(|_| HarnessError::Config(format!("bad duration {v}")))
}
