use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use rollread_core::model::ModelParams;
use rollread_cli::bench::{cmd_bench_blocksize, cmd_bench_files, cmd_bench_parallel, emit_csv, Sweep};
use rollread_cli::config::{parse_byte_list, parse_bytes, parse_tiers, seconds, BenchConfig, ComputeRate, FileConfig};
use rollread_cli::fixture::{ensure_local_fixture, generate_fixture, sha256_file};
use rollread_cli::tools::{
    cmd_model, format_header, format_model_table, histogram_rows, local_source, remote_source, trk_histogram,
    trk_info, Source,
};

#[derive(Parser)]
#[command(name = "rollread", version, about = "Rolling prefetch for sequential reads from object storage")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Object store URI: sim://DIR?latency=S&bandwidth=B or s3://bucket.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Cache tiers, fastest first: PATH:SIZE[,PATH:SIZE...].
    #[arg(long, global = true)]
    tiers: Option<String>,
    #[arg(long, global = true)]
    blocksize: Option<String>,
    /// Seconds of compute per byte, or `matched`.
    #[arg(long, global = true)]
    compute_rate: Option<ComputeRate>,
    #[arg(long, global = true)]
    reps: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seconds between evictor sweeps.
    #[arg(long, global = true)]
    evict_interval: Option<f64>,
    /// Write CSV here instead of standard output.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic .trk shards.
    Fixture(FixtureArgs),
    /// Evaluate the timing model.
    Model(ModelArgs),
    /// Time sequential against rolling reads.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Inspect .trk files.
    #[command(subcommand)]
    Trk(TrkCommand),
    /// Stream objects through the rolling reader to a file or standard output.
    Cat {
        keys: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value = "fixture")]
    name: String,
    #[arg(long, default_value_t = 1)]
    shards: usize,
    #[arg(long, default_value = "32MiB")]
    size: String,
    /// Output directory; defaults to the simulated backend's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 1)]
    blocks: u64,
    #[arg(long, default_value = "1GiB")]
    data_size: String,
    /// Per-request latency in seconds; defaults to the backend's.
    #[arg(long)]
    latency: Option<f64>,
    /// Bytes per second; defaults to the backend's.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    local_latency: f64,
    #[arg(long)]
    local_write_bandwidth: Option<f64>,
    #[arg(long)]
    local_read_bandwidth: Option<f64>,
    /// Emit one row per block count from 1 to 1024.
    #[arg(long)]
    sweep: bool,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Sweep the number of shards read as one stream.
    Files {
        #[arg(long, default_value = "1,2,4,8,16")]
        counts: String,
        #[arg(long, default_value = "32MiB")]
        shard_size: String,
    },
    /// Sweep the blocksize over one shard.
    Blocksize {
        #[arg(long, default_value = "256MiB")]
        data_size: String,
        #[arg(long, default_value = "1MiB,2MiB,4MiB,8MiB,16MiB,32MiB,64MiB,128MiB,256MiB")]
        blocksizes: String,
    },
    /// Run several independent consumers at once.
    Parallel {
        #[arg(long, default_value_t = 4)]
        consumers: usize,
        #[arg(long, default_value = "128MiB")]
        data_size: String,
    },
}

#[derive(Subcommand)]
enum TrkCommand {
    /// Print the header of the first file and the total streamline count.
    Info(TrkInputs),
    /// Streamline length histogram as CSV.
    Histogram {
        #[command(flatten)]
        inputs: TrkInputs,
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Args)]
struct TrkInputs {
    /// Local paths, or object keys when --remote is given.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Read the inputs from the backend through the rolling reader.
    #[arg(long)]
    remote: bool,
}

fn load_config(g: &GlobalOpts) -> anyhow::Result<BenchConfig> {
    let mut cfg = BenchConfig::default();
    if let Some(path) = &g.config {
        let file = FileConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply(&file)?;
    }
    if let Some(v) = &g.backend {
        cfg.backend = v.clone();
    }
    if let Some(v) = &g.tiers {
        cfg.tiers = parse_tiers(v)?;
    }
    if let Some(v) = &g.blocksize {
        cfg.blocksize = parse_bytes(v)?;
    }
    if let Some(v) = g.compute_rate {
        cfg.compute_rate = v;
    }
    if let Some(v) = g.reps {
        cfg.reps = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.evict_interval {
        cfg.evict_interval = seconds(v)?;
    }
    if let Some(v) = &g.csv {
        cfg.csv = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn source(cfg: &BenchConfig, t: &TrkInputs) -> anyhow::Result<Source> {
    Ok(if t.remote {
        remote_source(cfg, &t.inputs)?
    } else {
        let paths: Vec<PathBuf> = t.inputs.iter().map(PathBuf::from).collect();
        local_source(&paths)?
    })
}

fn print_points(sweep: &Sweep, label: &str) {
    eprintln!("{label:>12} {:>8} {:>8} {:>8} {:>8} {:>4}", "n_blocks", "model", "mean", "sd", "ok");
    for p in &sweep.points {
        eprintln!(
            "{:>12} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>4}",
            p.x, p.n_blocks, p.model_speedup, p.mean_speedup, p.sd_speedup, p.all_ok
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.global)?;
    let csv = cfg.csv.as_deref();
    match cli.command {
        Command::Fixture(a) => {
            let size = parse_bytes(&a.size)?;
            let shards = match a.out {
                Some(dir) => generate_fixture(&dir, &format!("{}/", a.name), a.shards, size, cfg.seed)?
                    .into_iter()
                    .map(|s| s.path)
                    .collect::<Vec<_>>(),
                None => {
                    let Some(sim) = cfg.sim_params() else {
                        bail!("--out is required unless the backend is sim://");
                    };
                    ensure_local_fixture(&sim.backing_dir, &a.name, a.shards, size, cfg.seed)?
                        .into_iter()
                        .map(|k| sim.backing_dir.join(k))
                        .collect()
                }
            };
            for p in shards {
                let bytes = std::fs::metadata(&p)?.len();
                println!("{}  {bytes}  {}", sha256_file(&p)?, p.display());
            }
        }
        Command::Model(a) => {
            let data = parse_bytes(&a.data_size)? as f64;
            let (l, b) = cfg.model_link();
            let (l, b) = (a.latency.unwrap_or(l), a.bandwidth.unwrap_or(b));
            let blocksize = (data / a.blocks.max(1) as f64).ceil() as u64;
            let rate = cfg.compute_rate.resolve(l, b, blocksize.max(1));
            let p = ModelParams::new(a.blocks, data, l, b, rate).with_local(
                a.local_latency,
                a.local_write_bandwidth.unwrap_or(f64::INFINITY),
                a.local_read_bandwidth.unwrap_or(f64::INFINITY),
            );
            let rows = cmd_model(&p, a.sweep)?;
            eprintln!("note: the model assumes compute time proportional to bytes consumed");
            if csv.is_some() || a.sweep {
                emit_csv(csv, &rows)?;
            } else {
                print!("{}", format_model_table(&rows));
            }
        }
        Command::Bench(BenchCommand::Files { counts, shard_size }) => {
            let counts = counts
                .split(',')
                .map(|c| c.trim().parse::<usize>().with_context(|| format!("bad file count `{c}`")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let sweep = cmd_bench_files(&cfg, &counts, parse_bytes(&shard_size)?)?;
            emit_csv(csv, &sweep.rows)?;
            print_points(&sweep, "files");
        }
        Command::Bench(BenchCommand::Blocksize { data_size, blocksizes }) => {
            let r = cmd_bench_blocksize(&cfg, parse_bytes(&data_size)?, &parse_byte_list(&blocksizes)?)?;
            emit_csv(csv, &r.sweep.rows)?;
            print_points(&r.sweep, "blocksize");
            eprintln!(
                "best rolling n_blocks {}, best sequential n_blocks {}, model optimum {}",
                r.measured_best_blocks, r.sequential_best_blocks, r.model_optimal_blocks
            );
        }
        Command::Bench(BenchCommand::Parallel { consumers, data_size }) => {
            let r = cmd_bench_parallel(&cfg, consumers, parse_bytes(&data_size)?)?;
            emit_csv(csv, &r.sweep.rows)?;
            eprintln!(
                "mean speedup {:.3}, max {:.3}, all hashes ok: {}",
                r.mean_speedup, r.max_speedup, r.all_ok
            );
        }
        Command::Trk(TrkCommand::Info(t)) => {
            let (header, count) = trk_info(source(&cfg, &t)?)?;
            print!("{}", format_header(&header));
            println!("streamlines:    {count}");
        }
        Command::Trk(TrkCommand::Histogram { inputs, bins }) => {
            let h = trk_histogram(source(&cfg, &inputs)?, bins)?;
            emit_csv(csv, &histogram_rows(&h))?;
        }
        Command::Cat { keys, out } => {
            if keys.is_empty() {
                bail!("no keys given");
            }
            let mut src = remote_source(&cfg, &keys)?;
            let mut sink: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(io::stdout().lock()),
            };
            io::copy(&mut src.reader, &mut sink)?;
            sink.flush()?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
