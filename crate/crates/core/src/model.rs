//! Closed-form timing model for sequential transfers versus rolling prefetch.
//!
//! Sequential transfers pay, for each of `n` blocks, the cloud latency, then
//! the transfer, then the compute, with no overlap. Rolling prefetch
//! pipelines block `i + 1`'s transfer (plus its local write) with block `i`'s
//! local read and compute, so after the first transfer each step costs the
//! slower of the two stages.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Number of blocks the data is split into (at least 1).
    pub blocks: u64,
    /// Total bytes transferred and processed.
    pub data_bytes: f64,
    /// Seconds of latency per cloud request.
    pub cloud_latency: f64,
    /// Cloud read bandwidth, bytes per second.
    pub cloud_bandwidth: f64,
    /// Seconds of compute per byte consumed.
    pub compute_per_byte: f64,
    /// Seconds of latency per local storage access.
    pub local_latency: f64,
    pub local_write_bandwidth: f64,
    pub local_read_bandwidth: f64,
}

impl ModelParams {
    /// Parameters with free local storage (zero latency, infinite bandwidth).
    pub fn new(
        blocks: u64,
        data_bytes: f64,
        cloud_latency: f64,
        cloud_bandwidth: f64,
        compute_per_byte: f64,
    ) -> Self {
        ModelParams {
            blocks,
            data_bytes,
            cloud_latency,
            cloud_bandwidth,
            compute_per_byte,
            local_latency: 0.0,
            local_write_bandwidth: f64::INFINITY,
            local_read_bandwidth: f64::INFINITY,
        }
    }

    pub fn with_local(mut self, latency: f64, write_bandwidth: f64, read_bandwidth: f64) -> Self {
        self.local_latency = latency;
        self.local_write_bandwidth = write_bandwidth;
        self.local_read_bandwidth = read_bandwidth;
        self
    }

    pub fn with_blocks(mut self, blocks: u64) -> Self {
        self.blocks = blocks;
        self
    }

    /// Same parameters with local transfers neglected.
    pub fn idealized(self) -> Self {
        self.with_local(0.0, f64::INFINITY, f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let rate = |v: f64| v > 0.0;
        let checks = [
            (self.blocks >= 1, "block count must be at least 1"),
            (nonneg(self.data_bytes), "data size must be finite and >= 0"),
            (nonneg(self.cloud_latency), "cloud latency must be finite and >= 0"),
            (nonneg(self.local_latency), "local latency must be finite and >= 0"),
            (nonneg(self.compute_per_byte), "compute rate must be finite and >= 0"),
            (rate(self.cloud_bandwidth), "cloud bandwidth must be > 0"),
            (rate(self.local_write_bandwidth), "local write bandwidth must be > 0"),
            (rate(self.local_read_bandwidth), "local read bandwidth must be > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidArgument((*msg).into())),
            None => Ok(()),
        }
    }

    fn n(&self) -> f64 {
        self.blocks as f64
    }

    /// Total compute time over all data.
    pub fn total_compute(&self) -> f64 {
        self.compute_per_byte * self.data_bytes
    }
}

/// Sequential transfers: `n·l_c + f/b_cr + c·f`.
pub fn sequential_time(p: &ModelParams) -> f64 {
    p.n() * p.cloud_latency + p.data_bytes / p.cloud_bandwidth + p.total_compute()
}

/// Download one block and write it to local storage.
pub fn block_transfer_time(p: &ModelParams) -> f64 {
    let per_block = p.data_bytes / p.n();
    p.cloud_latency + per_block / p.cloud_bandwidth + p.local_latency + per_block / p.local_write_bandwidth
}

/// Read one block from local storage and process it.
pub fn block_compute_time(p: &ModelParams) -> f64 {
    let per_block = p.data_bytes / p.n();
    p.local_latency + per_block / p.local_read_bandwidth + p.compute_per_byte * per_block
}

/// Rolling prefetch: first transfer, `n − 1` overlapped steps, last compute.
pub fn prefetch_time(p: &ModelParams) -> f64 {
    let cloud = block_transfer_time(p);
    let comp = block_compute_time(p);
    cloud + (p.n() - 1.0) * cloud.max(comp) + comp
}

/// Ratio of sequential to prefetch time with local transfers neglected.
/// Always in `[1, 2)`.
pub fn speedup(p: &ModelParams) -> f64 {
    let q = p.idealized();
    let cloud = block_transfer_time(&q);
    let comp = block_compute_time(&q);
    let pf = prefetch_time(&q);
    if pf == 0.0 {
        return 1.0;
    }
    1.0 + (q.n() - 1.0) * cloud.min(comp) / pf
}

/// Block count minimizing prefetch time: `sqrt(c·f / l_c)`, rounded and at least 1.
pub fn optimal_blocks(compute_per_byte: f64, data_bytes: f64, cloud_latency: f64) -> u64 {
    let continuous = (compute_per_byte * data_bytes / cloud_latency).sqrt();
    if continuous.is_finite() {
        continuous.round().max(1.0) as u64
    } else {
        1
    }
}

/// Large-block-count behaviour: both times grow linearly in the block count,
/// sequential as `n·l_c` and prefetch as `n·(l_c + l_l)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Asymptotes {
    pub sequential: f64,
    pub prefetch: f64,
}

pub fn asymptotes(p: &ModelParams) -> Asymptotes {
    Asymptotes {
        sequential: p.n() * p.cloud_latency,
        prefetch: p.n() * (p.cloud_latency + p.local_latency),
    }
}

/// Distance between the two asymptotes, `n·l_l`.
pub fn asymptote_gap(p: &ModelParams) -> f64 {
    let a = asymptotes(p);
    a.prefetch - a.sequential
}

/// Every model quantity for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSummary {
    pub params: ModelParams,
    pub sequential: f64,
    pub transfer_per_block: f64,
    pub compute_per_block: f64,
    pub prefetch: f64,
    pub speedup: f64,
    pub optimal_blocks: u64,
    pub asymptote_gap: f64,
}

pub fn summarize(p: &ModelParams) -> Result<ModelSummary> {
    p.validate()?;
    Ok(ModelSummary {
        params: *p,
        sequential: sequential_time(p),
        transfer_per_block: block_transfer_time(p),
        compute_per_block: block_compute_time(p),
        prefetch: prefetch_time(p),
        speedup: speedup(p),
        optimal_blocks: if p.cloud_latency > 0.0 {
            optimal_blocks(p.compute_per_byte, p.data_bytes, p.cloud_latency)
        } else {
            1
        },
        asymptote_gap: asymptote_gap(p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GIB: f64 = 1073741824.0;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sequential_examples() {
        // 16 blocks of a 1 GiB file over a 0.1 s / 91 MB/s link.
        let p = ModelParams::new(16, GIB, 0.1, 91e6, 0.0);
        assert!(close(sequential_time(&p), 1.6 + GIB / 91e6, 1e-12));
        assert!(close(sequential_time(&p), 13.3994, 1e-4));
        let p = ModelParams::new(7, 0.0, 0.1, 91e6, 1e-9);
        assert!(close(sequential_time(&p), 0.7, 1e-12));
        let p = ModelParams::new(1, 5e6, 0.0, 1e6, 0.0);
        assert_eq!(sequential_time(&p), 5.0);
    }

    #[test]
    fn per_block_examples() {
        let p = ModelParams::new(10, 640e6, 0.1, 91e6, 0.0);
        assert!(close(block_transfer_time(&p), 0.1 + 64e6 / 91e6, 1e-12));
        assert!(close(block_transfer_time(&p), 0.8033, 1e-4));
        assert_eq!(block_compute_time(&p), 0.0);

        let local = p.with_local(0.5, 32e6, 64e6);
        assert!(close(block_transfer_time(&local), 0.1 + 64e6 / 91e6 + 0.5 + 2.0, 1e-12));
        assert!(close(block_compute_time(&local), 0.5 + 1.0, 1e-12));
    }

    #[test]
    fn prefetch_examples() {
        // One block: no overlap at all.
        let p = ModelParams::new(1, 100.0, 1.0, 100.0, 0.01);
        assert!(close(prefetch_time(&p), block_transfer_time(&p) + block_compute_time(&p), 1e-12));

        // Balanced: 1 s transfer and 1 s compute per block.
        let p = ModelParams::new(10, 10.0, 0.5, 2.0, 1.0);
        assert!(close(block_transfer_time(&p), 1.0, 1e-12));
        assert!(close(block_compute_time(&p), 1.0, 1e-12));
        assert!(close(prefetch_time(&p), 11.0, 1e-12));
        assert!(close(speedup(&p), 20.0 / 11.0, 1e-12));

        // No compute: transfers back to back.
        let p = ModelParams::new(8, 80.0, 0.2, 10.0, 0.0);
        assert!(close(prefetch_time(&p), 8.0 * block_transfer_time(&p), 1e-12));
        assert_eq!(speedup(&p), 1.0);
    }

    #[test]
    fn speedup_ignores_caller_local_costs() {
        let p = ModelParams::new(10, 10.0, 0.5, 2.0, 1.0).with_local(3.0, 1.0, 1.0);
        assert!(close(speedup(&p), 20.0 / 11.0, 1e-12));
        assert_eq!(speedup(&p.with_blocks(1)), 1.0);
    }

    #[test]
    fn optimal_block_examples() {
        // 100 s of compute against 0.1 s latency.
        assert_eq!(optimal_blocks(1e-6, 100e6, 0.1), 32);
        assert_eq!(optimal_blocks(0.0, 1e9, 0.1), 1);
        assert_eq!(optimal_blocks(1e-3, 100.0, 0.1), 1);
    }

    #[test]
    fn asymptote_examples() {
        let p = ModelParams::new(1_000_000, GIB, 0.1, 91e6, 1e-9);
        assert_eq!(asymptote_gap(&p), 0.0);
        let p = p.with_local(1.6e-6, 2221e6, 2221e6);
        assert!(close(asymptote_gap(&p), 1.6, 1e-9));
        let doubled = asymptote_gap(&p.with_blocks(2_000_000));
        assert!(close(doubled, 2.0 * asymptote_gap(&p), 1e-9));
    }

    #[test]
    fn validation() {
        assert!(ModelParams::new(0, 1.0, 0.1, 1.0, 0.0).validate().is_err());
        assert!(ModelParams::new(1, 1.0, 0.1, 0.0, 0.0).validate().is_err());
        assert!(ModelParams::new(1, 1.0, -0.1, 1.0, 0.0).validate().is_err());
        assert!(ModelParams::new(1, 1.0, 0.1, 1.0, 0.0).validate().is_ok());
    }

    fn params() -> impl Strategy<Value = ModelParams> {
        (1u64..5000, 1e3..1e11f64, 1e-4..1.0f64, 1e5..1e10f64, 0.0..1e-7f64)
            .prop_map(|(n, f, l, b, c)| ModelParams::new(n, f, l, b, c))
    }

    proptest! {
        #[test]
        fn sequential_time_splits_into_pipeline_plus_masked_work(p in params()) {
            let cloud = block_transfer_time(&p);
            let comp = block_compute_time(&p);
            let rhs = prefetch_time(&p) + (p.blocks as f64 - 1.0) * cloud.min(comp);
            let lhs = sequential_time(&p);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
        }

        #[test]
        fn speedup_is_bounded(p in params()) {
            let s = speedup(&p);
            prop_assert!((1.0..2.0).contains(&s), "speedup {}", s);
            let direct = sequential_time(&p) / prefetch_time(&p);
            prop_assert!((s - direct).abs() <= 1e-9 * direct);
        }

        #[test]
        fn sequential_time_is_minimal_with_one_block(p in params()) {
            prop_assert!(sequential_time(&p.with_blocks(1)) <= sequential_time(&p));
        }
    }
}
