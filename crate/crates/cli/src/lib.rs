//! Benchmark harness for rolling prefetch: synthetic fixtures, timed
//! sequential and rolling runs, parameter sweeps and CSV reporting.

pub mod bench;
pub mod compute;
pub mod config;
pub mod error;
pub mod fixture;
pub mod harness;
pub mod stats;
pub mod tools;

pub use bench::{cmd_bench_blocksize, cmd_bench_files, cmd_bench_parallel, BenchRow, Sweep};
pub use compute::{synthetic_compute, SyntheticCompute};
pub use config::{BenchConfig, ComputeRate};
pub use error::{HarnessError, Result};
pub use harness::{run_mode, BenchResult, Mode, RunSpec, Workload};
