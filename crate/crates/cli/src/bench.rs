//! Parameter sweeps comparing sequential and rolling runs, reported as CSV.
//!
//! Every row echoes the full configuration it was measured under. Rolling
//! rows carry the measured speedup (sequential wall time of the same
//! repetition divided by the rolling wall time), the model's prediction and
//! their ratio in `speedup_vs_model`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use rollread_core::model::{self, ModelParams};
use rollread_core::{open_store, ObjectStore, TierSpec};
use serde::Serialize;

use crate::config::BenchConfig;
use crate::error::{HarnessError, Result};
use crate::fixture::ensure_local_fixture;
use crate::harness::{run_mode, BenchResult, Mode, RunSpec, Workload};
use crate::stats::{mean, sample_sd};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: Mode,
    pub n_files: usize,
    pub total_bytes: u64,
    pub rep: u32,
    pub wall_time: f64,
    pub speedup_vs_model: Option<f64>,
    pub measured_speedup: Option<f64>,
    pub model_speedup: f64,
    pub model_time: f64,
    pub consumer: usize,
    pub blocksize: u64,
    pub n_blocks: u64,
    pub compute_rate: f64,
    pub latency: f64,
    pub bandwidth: f64,
    pub cache_bytes: u64,
    pub evict_interval: f64,
    pub seed: u64,
    pub bytes_read: u64,
    pub waits: u64,
    pub cache_hits: u64,
    pub fallback_reads: u64,
    pub peak_cache_used: u64,
    pub ok: bool,
    pub error: String,
}

/// Aggregate over the repetitions (and consumers) of one sweep point.
#[derive(Debug, Clone)]
pub struct PointSummary {
    /// The swept value: file count, blocksize or consumer count.
    pub x: u64,
    pub n_blocks: u64,
    pub model_speedup: f64,
    pub speedups: Vec<f64>,
    pub mean_speedup: f64,
    pub sd_speedup: f64,
    pub sequential_mean: f64,
    pub rolling_mean: f64,
    /// Every run in this point was byte-correct.
    pub all_ok: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Sweep {
    pub rows: Vec<BenchRow>,
    pub points: Vec<PointSummary>,
}

impl Sweep {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.rows)
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_speedup).collect()
    }
}

pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// The store plus, for simulated backends, its backing directory.
pub struct Backend {
    pub store: Arc<dyn ObjectStore>,
    pub local_root: Option<std::path::PathBuf>,
}

impl Backend {
    pub fn open(cfg: &BenchConfig) -> Result<Self> {
        Ok(Backend {
            store: open_store(&cfg.backend)?,
            local_root: cfg.sim_params().map(|p| p.backing_dir),
        })
    }

    /// Keys of a named fixture, generating it first on a simulated backend.
    /// Other backends must already hold the objects under `<name>/`.
    pub fn fixture(&self, name: &str, shards: usize, shard_size: u64, seed: u64) -> Result<Vec<String>> {
        match &self.local_root {
            Some(root) => ensure_local_fixture(root, name, shards, shard_size, seed),
            None => {
                let keys = self.store.list_keys(&format!("{name}/"))?;
                let keys: Vec<String> = keys.into_iter().filter(|k| k.ends_with(".trk")).collect();
                if keys.len() < shards {
                    return Err(HarnessError::Config(format!(
                        "{} holds {} objects under `{name}/`, need {shards}; upload the output of `rollread fixture`",
                        self.store.uri(),
                        keys.len()
                    )));
                }
                Ok(keys.into_iter().take(shards).collect())
            }
        }
    }

    pub fn workload(&self, keys: &[String]) -> Result<Workload> {
        Workload::open(&self.store, keys, self.local_root.as_deref())
    }
}

fn fixture_name(kind: &str, shards: usize, shard_size: u64, seed: u64) -> String {
    format!("{kind}-{shards}x{shard_size}-s{seed}")
}

struct Context<'a> {
    cfg: &'a BenchConfig,
    latency: f64,
    bandwidth: f64,
}

impl Context<'_> {
    fn new(cfg: &BenchConfig) -> Context<'_> {
        let (latency, bandwidth) = cfg.model_link();
        Context { cfg, latency, bandwidth }
    }

    fn spec(&self, blocksize: u64, compute_rate: f64, tiers: Vec<TierSpec>) -> RunSpec {
        RunSpec {
            blocksize,
            compute_rate,
            tiers,
            evict_interval: self.cfg.evict_interval,
            prefetch: self.cfg.prefetch.clone(),
            read_size: self.cfg.read_size,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        w: &Workload,
        spec: &RunSpec,
        params: &ModelParams,
        rep: u32,
        consumer: usize,
        r: &BenchResult,
        measured: Option<f64>,
    ) -> BenchRow {
        let model_speedup = model::speedup(params);
        BenchRow {
            mode: r.mode,
            n_files: w.n_files(),
            total_bytes: w.total_bytes,
            rep,
            wall_time: r.wall_time,
            speedup_vs_model: measured.map(|m| m / model_speedup),
            measured_speedup: measured,
            model_speedup,
            model_time: match r.mode {
                Mode::Sequential => model::sequential_time(params),
                Mode::Rolling => model::prefetch_time(&params.idealized()),
            },
            consumer,
            blocksize: spec.blocksize,
            n_blocks: params.blocks,
            compute_rate: spec.compute_rate,
            latency: self.latency,
            bandwidth: self.bandwidth,
            cache_bytes: spec.cache_bytes(),
            evict_interval: spec.evict_interval.as_secs_f64(),
            seed: self.cfg.seed,
            bytes_read: r.bytes_read,
            waits: r.waits,
            cache_hits: r.cache_hits,
            fallback_reads: r.fallback_reads,
            peak_cache_used: r.peak_cache_used,
            ok: r.ok,
            error: r.error.clone().unwrap_or_default(),
        }
    }

    /// Alternates sequential and rolling runs for every repetition.
    fn point(&self, x: u64, w: &Workload, spec: &RunSpec, sweep: &mut Sweep) -> Result<()> {
        let params = w.model_params(spec.blocksize, spec.compute_rate, self.latency, self.bandwidth)?;
        let (mut seq_t, mut roll_t, mut speedups, mut all_ok) = (vec![], vec![], vec![], true);
        for rep in 0..self.cfg.reps {
            let seq = run_mode(w, spec, Mode::Sequential);
            let roll = run_mode(w, spec, Mode::Rolling);
            let ok = seq.ok && roll.ok;
            all_ok &= ok;
            let measured = ok.then(|| seq.wall_time / roll.wall_time);
            log::info!(
                "x={x} rep={rep}: sequential {:.3}s rolling {:.3}s speedup {}",
                seq.wall_time,
                roll.wall_time,
                measured.map_or("failed".into(), |m| format!("{m:.3}"))
            );
            sweep.rows.push(self.row(w, spec, &params, rep, 0, &seq, None));
            sweep.rows.push(self.row(w, spec, &params, rep, 0, &roll, measured));
            if ok {
                seq_t.push(seq.wall_time);
                roll_t.push(roll.wall_time);
                speedups.extend(measured);
            }
        }
        sweep.points.push(PointSummary {
            x,
            n_blocks: params.blocks,
            model_speedup: model::speedup(&params),
            mean_speedup: mean(&speedups),
            sd_speedup: sample_sd(&speedups),
            speedups,
            sequential_mean: mean(&seq_t),
            rolling_mean: mean(&roll_t),
            all_ok,
        });
        Ok(())
    }
}

/// Sweeps the number of shards read as one stream.
pub fn cmd_bench_files(cfg: &BenchConfig, shard_counts: &[usize], shard_size: u64) -> Result<Sweep> {
    cfg.validate()?;
    if shard_counts.is_empty() || shard_counts.contains(&0) {
        return Err(HarnessError::Config("file counts must be non-empty and at least 1".into()));
    }
    let ctx = Context::new(cfg);
    let backend = Backend::open(cfg)?;
    let most = *shard_counts.iter().max().unwrap();
    let keys = backend.fixture(&fixture_name("files", most, shard_size, cfg.seed), most, shard_size, cfg.seed)?;
    let rate = cfg.resolved_compute_rate(cfg.blocksize);
    let spec = ctx.spec(cfg.blocksize, rate, cfg.tiers.clone());
    let mut sweep = Sweep::default();
    for &k in shard_counts {
        let w = backend.workload(&keys[..k])?;
        ctx.point(k as u64, &w, &spec, &mut sweep)?;
    }
    Ok(sweep)
}

#[derive(Debug, Clone)]
pub struct BlocksizeSweep {
    pub sweep: Sweep,
    pub compute_rate: f64,
    pub total_bytes: u64,
    /// Block count with the lowest mean rolling time.
    pub measured_best_blocks: u64,
    /// Block count with the lowest mean sequential time.
    pub sequential_best_blocks: u64,
    pub model_optimal_blocks: u64,
}

/// Sweeps the blocksize over one fixed shard of `data_size` bytes. The
/// compute rate is fixed across the sweep, resolved against `cfg.blocksize`
/// when it is `matched`.
pub fn cmd_bench_blocksize(cfg: &BenchConfig, data_size: u64, blocksizes: &[u64]) -> Result<BlocksizeSweep> {
    cfg.validate()?;
    if blocksizes.is_empty() {
        return Err(HarnessError::Config("no blocksizes to sweep".into()));
    }
    if let Some(b) = blocksizes.iter().find(|&&b| b < crate::config::MIN_BLOCKSIZE) {
        return Err(HarnessError::Config(format!("blocksize {b} is below the 4 KiB minimum")));
    }
    let ctx = Context::new(cfg);
    let backend = Backend::open(cfg)?;
    let keys = backend.fixture(&fixture_name("blocks", 1, data_size, cfg.seed), 1, data_size, cfg.seed)?;
    let w = backend.workload(&keys)?;
    let rate = cfg.resolved_compute_rate(cfg.blocksize);
    let mut sweep = Sweep::default();
    for &bs in blocksizes {
        let spec = ctx.spec(bs, rate, cfg.tiers.clone());
        ctx.point(bs, &w, &spec, &mut sweep)?;
    }
    let argmin = |f: fn(&PointSummary) -> f64| {
        sweep
            .points
            .iter()
            .filter(|p| p.all_ok)
            .min_by(|a, b| f(a).total_cmp(&f(b)))
            .map_or(0, |p| p.n_blocks)
    };
    Ok(BlocksizeSweep {
        measured_best_blocks: argmin(|p| p.rolling_mean),
        sequential_best_blocks: argmin(|p| p.sequential_mean),
        model_optimal_blocks: model::optimal_blocks(rate, w.total_bytes as f64, ctx.latency),
        compute_rate: rate,
        total_bytes: w.total_bytes,
        sweep,
    })
}

#[derive(Debug, Clone)]
pub struct ParallelSweep {
    pub sweep: Sweep,
    /// Per consumer, per repetition speedups.
    pub per_consumer: Vec<Vec<f64>>,
    pub mean_speedup: f64,
    /// Largest single-run speedup of any consumer.
    pub max_speedup: f64,
    /// Every consumer's digest matched its fixture in every run.
    pub all_ok: bool,
}

fn consumer_tiers(tiers: &[TierSpec], i: usize) -> Vec<TierSpec> {
    tiers
        .iter()
        .map(|t| TierSpec {
            path: t.path.join(format!("consumer-{i}")),
            capacity: t.capacity,
        })
        .collect()
}

/// Runs `consumers` independent streams at once, each over its own fixture
/// and with its own cache locations.
pub fn cmd_bench_parallel(cfg: &BenchConfig, consumers: usize, data_size: u64) -> Result<ParallelSweep> {
    cfg.validate()?;
    if consumers == 0 {
        return Err(HarnessError::Config("need at least one consumer".into()));
    }
    let ctx = Context::new(cfg);
    let backend = Backend::open(cfg)?;
    let rate = cfg.resolved_compute_rate(cfg.blocksize);
    let mut loads = Vec::with_capacity(consumers);
    for i in 0..consumers {
        let seed = cfg.seed.wrapping_add(i as u64);
        let keys = backend.fixture(&fixture_name("parallel", 1, data_size, seed), 1, data_size, seed)?;
        let w = backend.workload(&keys)?;
        let spec = ctx.spec(cfg.blocksize, rate, consumer_tiers(&cfg.tiers, i));
        let params = w.model_params(spec.blocksize, rate, ctx.latency, ctx.bandwidth)?;
        loads.push((w, spec, params));
    }

    let run_all = |mode: Mode| -> Vec<BenchResult> {
        thread::scope(|s| {
            let handles: Vec<_> = loads
                .iter()
                .map(|(w, spec, _)| s.spawn(move || run_mode(w, spec, mode)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("consumer panicked")).collect()
        })
    };

    let mut sweep = Sweep::default();
    let mut per_consumer = vec![Vec::new(); consumers];
    let mut all_ok = true;
    for rep in 0..cfg.reps {
        let seq = run_all(Mode::Sequential);
        let roll = run_all(Mode::Rolling);
        for (i, (w, spec, params)) in loads.iter().enumerate() {
            let ok = seq[i].ok && roll[i].ok;
            all_ok &= ok;
            let measured = ok.then(|| seq[i].wall_time / roll[i].wall_time);
            log::info!(
                "consumer {i} rep {rep}: sequential {:.3}s rolling {:.3}s",
                seq[i].wall_time,
                roll[i].wall_time
            );
            sweep.rows.push(ctx.row(w, spec, params, rep, i, &seq[i], None));
            sweep.rows.push(ctx.row(w, spec, params, rep, i, &roll[i], measured));
            per_consumer[i].extend(measured);
        }
    }
    let all: Vec<f64> = per_consumer.iter().flatten().copied().collect();
    sweep.points.push(PointSummary {
        x: consumers as u64,
        n_blocks: loads[0].2.blocks,
        model_speedup: model::speedup(&loads[0].2),
        mean_speedup: mean(&all),
        sd_speedup: sample_sd(&all),
        speedups: all.clone(),
        sequential_mean: mean(&sweep.rows.iter().filter(|r| r.mode == Mode::Sequential).map(|r| r.wall_time).collect::<Vec<_>>()),
        rolling_mean: mean(&sweep.rows.iter().filter(|r| r.mode == Mode::Rolling).map(|r| r.wall_time).collect::<Vec<_>>()),
        all_ok,
    });
    Ok(ParallelSweep {
        mean_speedup: mean(&all),
        max_speedup: all.iter().copied().fold(f64::NAN, f64::max),
        per_consumer,
        all_ok,
        sweep,
    })
}

/// Writes rows to `path`, or to standard output when no path is given.
pub fn emit_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    match path {
        Some(p) => write_csv(std::fs::File::create(p)?, rows),
        None => write_csv(std::io::stdout().lock(), rows),
    }
}
