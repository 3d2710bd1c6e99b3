use std::io::{self, Read, Write};

use super::{apply_affine, parse_header, Streamline, TrkError, TrkHeader, VoxelShift, HEADER_SIZE};

/// Point counts above this are treated as corruption.
pub const DEFAULT_MAX_POINTS: u32 = 1_000_000;

/// Lazy streamline iterator over a byte source holding one `.trk` file or
/// several concatenated ones.
#[derive(Debug)]
pub struct TrkReader<R> {
    src: R,
    header: TrkHeader,
    /// End offsets of each concatenated file still to be read; empty for a
    /// single file of unknown length.
    file_ends: std::collections::VecDeque<u64>,
    consumed: u64,
    files_started: usize,
    max_points: u32,
    world: Option<VoxelShift>,
    done: bool,
    buf: Vec<u8>,
}

/// Fills `buf` as far as the source allows; returns the number of bytes read.
fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match src.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn read_header<R: Read>(src: &mut R) -> Result<TrkHeader, TrkError> {
    let mut raw = [0u8; HEADER_SIZE];
    if read_full(src, &mut raw)? < HEADER_SIZE {
        return Err(TrkError::TruncatedHeader);
    }
    parse_header(&raw)
}

impl<R: Read> TrkReader<R> {
    /// Reads the header of a single file.
    pub fn new(mut src: R) -> Result<Self, TrkError> {
        let header = read_header(&mut src)?;
        Ok(Self::build(src, header, Default::default()))
    }

    /// Reads a concatenation of files with the given sizes, decoding each
    /// file's own header at its boundary.
    pub fn concatenated(mut src: R, file_sizes: &[u64]) -> Result<Self, TrkError> {
        if file_sizes.is_empty() {
            return Err(TrkError::EmptyFile);
        }
        let header = read_header(&mut src)?;
        let ends = file_sizes
            .iter()
            .scan(0u64, |acc, &s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        Ok(Self::build(src, header, ends))
    }

    fn build(src: R, header: TrkHeader, file_ends: std::collections::VecDeque<u64>) -> Self {
        TrkReader {
            src,
            header,
            file_ends,
            consumed: HEADER_SIZE as u64,
            files_started: 1,
            max_points: DEFAULT_MAX_POINTS,
            world: None,
            done: false,
            buf: Vec::new(),
        }
    }

    pub fn with_max_points(mut self, max_points: u32) -> Self {
        self.max_points = max_points;
        self
    }

    /// Yields streamlines in world coordinates instead of stored ones.
    pub fn in_world_coordinates(mut self, shift: VoxelShift) -> Self {
        self.world = Some(shift);
        self
    }

    /// Header of the file currently being read.
    pub fn header(&self) -> &TrkHeader {
        &self.header
    }

    pub fn bytes_consumed(&self) -> u64 {
        self.consumed
    }

    pub fn files_started(&self) -> usize {
        self.files_started
    }

    pub fn into_inner(self) -> R {
        self.src
    }

    fn next_file_if_at_boundary(&mut self) -> Result<bool, TrkError> {
        while let Some(&end) = self.file_ends.front() {
            if self.consumed < end {
                return Ok(true);
            }
            self.file_ends.pop_front();
            if self.file_ends.is_empty() {
                return Ok(false);
            }
            self.header = read_header(&mut self.src)?;
            self.consumed += HEADER_SIZE as u64;
            self.files_started += 1;
        }
        Ok(true)
    }

    pub fn next_streamline(&mut self) -> Result<Option<Streamline>, TrkError> {
        if self.done {
            return Ok(None);
        }
        let out = self.decode_next();
        if !matches!(out, Ok(Some(_))) {
            self.done = true;
        }
        out
    }

    fn decode_next(&mut self) -> Result<Option<Streamline>, TrkError> {
        if !self.next_file_if_at_boundary()? {
            return Ok(None);
        }
        let start = self.consumed;
        let mut count = [0u8; 4];
        match read_full(&mut self.src, &mut count)? {
            0 if self.file_ends.is_empty() => return Ok(None),
            4 => {}
            _ => return Err(TrkError::TruncatedRecord { offset: start }),
        }
        let n = i32::from_le_bytes(count);
        if n <= 0 || n as u32 > self.max_points {
            return Err(TrkError::CorruptCount {
                count: n.into(),
                offset: start,
            });
        }
        let n = n as usize;
        let ns = self.header.scalars_per_point();
        let np = self.header.properties_per_streamline();
        let point_floats = n * (3 + ns);
        let body = 4 * (point_floats + np);
        if let Some(&end) = self.file_ends.front() {
            if start + 4 + body as u64 > end {
                return Err(TrkError::TruncatedRecord { offset: start });
            }
        }
        self.buf.resize(body, 0);
        if read_full(&mut self.src, &mut self.buf[..4 * point_floats])? < 4 * point_floats {
            return Err(TrkError::TruncatedRecord { offset: start });
        }
        if np > 0 && read_full(&mut self.src, &mut self.buf[4 * point_floats..])? < 4 * np {
            return Err(TrkError::TruncatedRecord { offset: start });
        }
        self.consumed = start + 4 + body as u64;

        let mut floats = self
            .buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut s = Streamline {
            points: Vec::with_capacity(n),
            scalars: Vec::with_capacity(n * ns),
            properties: Vec::with_capacity(np),
        };
        for _ in 0..n {
            let p = [0; 3].map(|_| floats.next().unwrap());
            s.points.push(p);
            s.scalars.extend(floats.by_ref().take(ns));
        }
        s.properties.extend(floats);
        match self.world {
            Some(shift) => apply_affine(&self.header, &s, shift).map(Some),
            None => Ok(Some(s)),
        }
    }
}

impl<R: Read> Iterator for TrkReader<R> {
    type Item = Result<Streamline, TrkError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_streamline().transpose()
    }
}

/// Encodes a header and its streamlines into `w`. The header's `n_count`
/// is written as given.
pub fn write_trk_to<'a, W, I>(mut w: W, header: &TrkHeader, streamlines: I) -> Result<u64, TrkError>
where
    W: Write,
    I: IntoIterator<Item = &'a Streamline>,
{
    let ns = header.scalars_per_point();
    let np = header.properties_per_streamline();
    w.write_all(&header.to_bytes())?;
    let mut written = HEADER_SIZE as u64;
    let mut rec = Vec::new();
    for s in streamlines {
        encode_record(s, ns, np, &mut rec)?;
        w.write_all(&rec)?;
        written += rec.len() as u64;
    }
    Ok(written)
}

/// Replaces `out` with the on-disk encoding of one record.
pub fn encode_record(s: &Streamline, n_scalars: usize, n_properties: usize, out: &mut Vec<u8>) -> Result<(), TrkError> {
    s.check(n_scalars, n_properties)?;
    let n = i32::try_from(s.points.len())
        .map_err(|_| TrkError::InconsistentCounts("too many points for one record".into()))?;
    out.clear();
    out.reserve(s.encoded_len(n_scalars) as usize);
    out.extend_from_slice(&n.to_le_bytes());
    for (i, p) in s.points.iter().enumerate() {
        p.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        s.scalars[i * n_scalars..(i + 1) * n_scalars]
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    s.properties.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(())
}

/// Encodes a whole file in memory, setting `n_count` to the streamline count.
pub fn write_trk(header: &TrkHeader, streamlines: &[Streamline]) -> Result<Vec<u8>, TrkError> {
    let mut h = header.clone();
    h.n_count = i32::try_from(streamlines.len())
        .map_err(|_| TrkError::InconsistentCounts("too many streamlines".into()))?;
    let mut out = Vec::new();
    write_trk_to(&mut out, &h, streamlines)?;
    Ok(out)
}
