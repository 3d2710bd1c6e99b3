//! Synthetic per-byte compute.
//!
//! Every byte is hashed so the consumer really reads its input, then the
//! caller is held until `rate · nbytes` seconds have passed since the call
//! began. The hold is a sleep rather than a spin so that concurrent
//! consumers and the prefetch workers are not starved on small machines.

use std::thread;
use std::time::{Duration, Instant};

use xxhash_rust::xxh3::Xxh3;

/// Stateful consumer that paces itself at a fixed number of seconds per
/// byte and keeps a running digest of everything it has seen.
#[derive(Clone)]
pub struct SyntheticCompute {
    rate: f64,
    hasher: Xxh3,
    bytes: u64,
    /// Oversleep from the previous call, subtracted from the next budget.
    carry: Duration,
}

impl SyntheticCompute {
    pub fn new(rate: f64) -> Self {
        SyntheticCompute {
            rate: rate.max(0.0),
            hasher: Xxh3::new(),
            bytes: 0,
            carry: Duration::ZERO,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn consume(&mut self, data: &[u8]) {
        let start = Instant::now();
        self.hasher.update(data);
        self.bytes += data.len() as u64;
        if self.rate == 0.0 || data.is_empty() {
            return;
        }
        let budget = Duration::from_secs_f64(self.rate * data.len() as f64);
        let Some(deadline) = (start + budget).checked_sub(self.carry) else {
            return;
        };
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
            self.carry = Instant::now().saturating_duration_since(deadline);
        } else {
            self.carry = Duration::ZERO;
        }
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    /// 128-bit digest of all bytes consumed so far.
    pub fn digest(&self) -> u128 {
        self.hasher.digest128()
    }
}

/// One-shot form: consumes `data` at `rate` seconds per byte and returns its digest.
pub fn synthetic_compute(rate: f64, data: &[u8]) -> u128 {
    let mut c = SyntheticCompute::new(rate);
    c.consume(data);
    c.digest()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timed(rate: f64, data: &[u8]) -> f64 {
        let t = Instant::now();
        synthetic_compute(rate, data);
        t.elapsed().as_secs_f64()
    }

    #[test]
    fn zero_rate_returns_immediately() {
        assert!(timed(0.0, &vec![1u8; 1 << 20]) < 0.05);
    }

    #[test]
    fn duration_tracks_rate_times_bytes() {
        let data = vec![7u8; 10_000_000];
        let t = timed(1e-8, &data);
        assert!((t - 0.1).abs() <= 0.005, "{t}");
    }

    #[test]
    fn doubling_bytes_doubles_time() {
        let t1 = timed(2e-8, &vec![0u8; 2_500_000]);
        let t2 = timed(2e-8, &vec![0u8; 5_000_000]);
        assert!((t2 / t1 - 2.0).abs() <= 0.2, "{t1} {t2}");
    }

    #[test]
    fn many_small_calls_do_not_drift() {
        let mut c = SyntheticCompute::new(1e-7);
        let chunk = vec![3u8; 1000];
        let t = Instant::now();
        for _ in 0..1000 {
            c.consume(&chunk);
        }
        let elapsed = t.elapsed().as_secs_f64();
        assert!((elapsed - 0.1).abs() <= 0.01, "{elapsed}");
    }

    #[test]
    fn digest_is_chunking_independent() {
        let data: Vec<u8> = (0..100_000u32).map(|i| (i * 31 % 256) as u8).collect();
        let mut a = SyntheticCompute::new(0.0);
        for c in data.chunks(777) {
            a.consume(c);
        }
        assert_eq!(a.digest(), synthetic_compute(0.0, &data));
        assert_eq!(a.bytes(), data.len() as u64);
    }
}
