use super::{streamline_length, Streamline, TrkError};

pub const DEFAULT_BINS: usize = 20;

/// Equal-width histogram. Bins are half-open except the last, which also
/// includes its upper edge.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl LengthHistogram {
    /// Bins spanning the observed `[min, max]`. When all values coincide the
    /// upper edge is nudged up so every bin has positive width.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self, TrkError> {
        let (lo, hi) = values
            .iter()
            .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
            .ok_or(TrkError::EmptyFile)?;
        let hi = if hi > lo {
            hi
        } else {
            lo + lo.abs().max(1.0) * f64::EPSILON * 2.0 * bins as f64
        };
        Self::with_range(values, lo, hi, bins)
    }

    /// Bins over a caller-supplied range; values outside it are not counted.
    pub fn with_range(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self, TrkError> {
        if bins == 0 || hi <= lo || !lo.is_finite() || !hi.is_finite() {
            return Err(TrkError::InvalidHeader(format!(
                "histogram needs bins > 0 and a finite range, got {bins} bins over [{lo}, {hi}]"
            )));
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        edges[bins] = hi;
        let mut hist = LengthHistogram {
            edges,
            counts: vec![0; bins],
        };
        for &v in values {
            if let Some(i) = hist.bin_of(v) {
                hist.counts[i] += 1;
            }
        }
        Ok(hist)
    }

    pub fn bin_of(&self, v: f64) -> Option<usize> {
        let n = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[n]);
        if !(v >= lo && v <= hi) {
            return None;
        }
        if v == hi {
            return Some(n - 1);
        }
        let mut i = (((v - lo) / (hi - lo)) * n as f64).floor() as usize;
        i = i.min(n - 1);
        while i > 0 && v < self.edges[i] {
            i -= 1;
        }
        while i + 1 < n && v >= self.edges[i + 1] {
            i += 1;
        }
        Some(i)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Single pass over a streamline source, keeping only the lengths.
pub fn length_histogram<I, E>(streamlines: I, bins: usize) -> Result<LengthHistogram, E>
where
    I: IntoIterator<Item = Result<Streamline, E>>,
    E: From<TrkError>,
{
    let mut lengths = Vec::new();
    for s in streamlines {
        lengths.push(streamline_length(&s?));
    }
    Ok(LengthHistogram::from_values(&lengths, bins)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_binning() {
        let h = LengthHistogram::from_values(&[0.0, 1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
    }

    #[test]
    fn constant_values() {
        let h = LengthHistogram::from_values(&[7.0; 5], DEFAULT_BINS).unwrap();
        assert_eq!(h.total(), 5);
        assert_eq!(h.counts[0], 5);
        assert!(h.edges.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn forced_range_drops_outliers() {
        let h = LengthHistogram::with_range(&[-1.0, 0.5, 1.0, 2.5], 0.0, 2.0, 2).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(LengthHistogram::from_values(&[], 20), Err(TrkError::EmptyFile)));
    }

    proptest! {
        #[test]
        fn counts_sum_to_input_and_respect_edges(
            values in prop::collection::vec(0.0f64..500.0, 1..300),
            bins in 1usize..40,
        ) {
            let h = LengthHistogram::from_values(&values, bins).unwrap();
            prop_assert_eq!(h.total(), values.len() as u64);
            prop_assert_eq!(h.edges.len(), bins + 1);
            for &v in &values {
                let i = h.bin_of(v).unwrap();
                prop_assert!(v >= h.edges[i]);
                prop_assert!(v < h.edges[i + 1] || (i == bins - 1 && v <= h.edges[bins]));
            }
        }
    }
}
