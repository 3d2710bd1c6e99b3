//! TrackVis `.trk` streamline files: header codec, lazy record reader,
//! writer, coordinate transform and streamline-length histogram.

mod affine;
mod header;
mod histogram;
mod reader;

use std::io;

use thiserror::Error;

pub use affine::{apply_affine, streamline_length, VoxelShift};
pub use header::{parse_header, TrkHeader, HEADER_SIZE};
pub use histogram::{length_histogram, LengthHistogram, DEFAULT_BINS};
pub use reader::{encode_record, write_trk, write_trk_to, TrkReader, DEFAULT_MAX_POINTS};

#[derive(Debug, Error)]
pub enum TrkError {
    #[error("not a TrackVis file (bad magic)")]
    BadMagic,
    #[error("header declares size {0}, expected 1000")]
    BadHeaderSize(i32),
    #[error("unsupported TrackVis version {0}")]
    UnsupportedVersion(i32),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("file ends inside the header")]
    TruncatedHeader,
    #[error("record starting at byte {offset} is truncated")]
    TruncatedRecord { offset: u64 },
    #[error("record at byte {offset} declares {count} points")]
    CorruptCount { count: i64, offset: u64 },
    #[error("vox_to_ras is not an invertible affine")]
    SingularAffine,
    #[error("no streamlines in input")]
    EmptyFile,
    #[error("inconsistent streamline: {0}")]
    InconsistentCounts(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One streamline: points in stored coordinates plus optional per-point
/// scalars (point-major) and per-streamline properties.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Streamline {
    pub points: Vec<[f32; 3]>,
    pub scalars: Vec<f32>,
    pub properties: Vec<f32>,
}

impl Streamline {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        Streamline {
            points,
            ..Default::default()
        }
    }

    /// Checks the field lengths against the header's per-point and
    /// per-streamline counts.
    pub fn check(&self, n_scalars: usize, n_properties: usize) -> Result<(), TrkError> {
        if self.points.is_empty() {
            return Err(TrkError::InconsistentCounts("streamline has no points".into()));
        }
        if self.scalars.len() != self.points.len() * n_scalars {
            return Err(TrkError::InconsistentCounts(format!(
                "{} scalars for {} points with {n_scalars} scalars each",
                self.scalars.len(),
                self.points.len()
            )));
        }
        if self.properties.len() != n_properties {
            return Err(TrkError::InconsistentCounts(format!(
                "{} properties, header declares {n_properties}",
                self.properties.len()
            )));
        }
        Ok(())
    }

    /// Bytes this record occupies on disk.
    pub fn encoded_len(&self, n_scalars: usize) -> u64 {
        4 + 4 * (self.points.len() * (3 + n_scalars) + self.properties.len()) as u64
    }
}
