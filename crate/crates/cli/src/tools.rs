//! Non-benchmark commands: model tables, `.trk` inspection and `cat`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::PathBuf;

use rollread_core::model::{self, ModelParams};
use rollread_core::trk::{length_histogram, LengthHistogram, TrkReader, DEFAULT_BINS};
use rollread_core::{build_tiers, FileSet, ObjectRef, StreamHandle, StreamOptions, TierSpec, TrkHeader};
use serde::Serialize;

use crate::bench::Backend;
use crate::config::BenchConfig;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct ModelRow {
    pub n_blocks: u64,
    pub data_bytes: f64,
    pub latency: f64,
    pub bandwidth: f64,
    pub compute_rate: f64,
    pub t_seq: f64,
    pub t_cloud: f64,
    pub t_comp: f64,
    pub t_pf: f64,
    pub speedup: f64,
    pub optimal_blocks: u64,
}

fn model_row(p: &ModelParams) -> Result<ModelRow> {
    let s = model::summarize(p)?;
    Ok(ModelRow {
        n_blocks: p.blocks,
        data_bytes: p.data_bytes,
        latency: p.cloud_latency,
        bandwidth: p.cloud_bandwidth,
        compute_rate: p.compute_per_byte,
        t_seq: s.sequential,
        t_cloud: s.transfer_per_block,
        t_comp: s.compute_per_block,
        t_pf: s.prefetch,
        speedup: s.speedup,
        optimal_blocks: s.optimal_blocks,
    })
}

pub const MODEL_SWEEP_MAX: u64 = 1024;

/// Model quantities for `p`, or for every block count in `1..=1024` when sweeping.
pub fn cmd_model(p: &ModelParams, sweep: bool) -> Result<Vec<ModelRow>> {
    if sweep {
        (1..=MODEL_SWEEP_MAX).map(|n| model_row(&p.with_blocks(n))).collect()
    } else {
        Ok(vec![model_row(p)?])
    }
}

pub fn format_model_table(rows: &[ModelRow]) -> String {
    let mut out = format!(
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>9} {:>8}\n",
        "n_blocks", "t_seq", "t_cloud", "t_comp", "t_pf", "speedup", "n_opt"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>8} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>9.4} {:>8}",
            r.n_blocks, r.t_seq, r.t_cloud, r.t_comp, r.t_pf, r.speedup, r.optimal_blocks
        );
    }
    out
}

/// A readable byte stream over several `.trk` files plus their sizes.
pub struct Source {
    pub reader: Box<dyn Read + Send>,
    pub sizes: Vec<u64>,
}

/// Local files read back to back.
pub fn local_source(paths: &[PathBuf]) -> Result<Source> {
    let mut sizes = Vec::with_capacity(paths.len());
    let mut reader: Box<dyn Read + Send> = Box::new(io::empty());
    for p in paths {
        let f = File::open(p)?;
        sizes.push(f.metadata()?.len());
        reader = Box::new(reader.chain(BufReader::new(f)));
    }
    Ok(Source { reader, sizes })
}

/// Objects from the configured backend, read through a rolling-prefetch stream.
pub fn remote_source(cfg: &BenchConfig, keys: &[String]) -> Result<Source> {
    let backend = Backend::open(cfg)?;
    let refs = keys
        .iter()
        .map(|k| ObjectRef::new(backend.store.clone(), k.clone()))
        .collect::<rollread_core::Result<Vec<_>>>()?;
    let fs = FileSet::new(refs, cfg.blocksize)?;
    let sizes = fs.sizes().to_vec();
    let name = format!("stream-{}", std::process::id());
    let tiers: Vec<TierSpec> = cfg
        .tiers
        .iter()
        .map(|t| TierSpec {
            path: t.path.join(&name),
            capacity: t.capacity,
        })
        .collect();
    let opts = StreamOptions {
        evict_interval: cfg.evict_interval,
        prefetch: cfg.prefetch.clone(),
        ..StreamOptions::default()
    };
    let dirs = tiers.iter().map(|t| t.path.clone()).collect();
    let stream = StreamHandle::open(fs, build_tiers(&tiers)?, opts)?;
    Ok(Source {
        reader: Box::new(OwnedStream { stream: Some(stream), dirs }),
        sizes,
    })
}

/// Closes the stream and removes its private cache directories on drop.
struct OwnedStream {
    stream: Option<StreamHandle>,
    dirs: Vec<PathBuf>,
}

impl Read for OwnedStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match &mut self.stream {
            Some(s) => s.read(buf),
            None => Ok(0),
        }
    }
}

impl Drop for OwnedStream {
    fn drop(&mut self) {
        if let Some(mut s) = self.stream.take() {
            if let Err(e) = s.close() {
                log::warn!("closing stream: {e}");
            }
        }
        for d in &self.dirs {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

fn text(bytes: &[u8]) -> String {
    let end = bytes.iter().position(|&b| b == 0).unwrap_or(bytes.len());
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}

pub fn format_header(h: &TrkHeader) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "magic:          {}", text(&h.magic));
    let _ = writeln!(out, "version:        {}", h.version);
    let _ = writeln!(out, "header_size:    {}", h.header_size);
    let _ = writeln!(out, "dim:            {:?}", h.dim);
    let _ = writeln!(out, "voxel_size:     {:?}", h.voxel_size);
    let _ = writeln!(out, "voxel_order:    {}", text(&h.voxel_order));
    let _ = writeln!(out, "n_scalars:      {}", h.n_scalars);
    let _ = writeln!(out, "n_properties:   {}", h.n_properties);
    let _ = writeln!(out, "n_count:        {}", h.n_count);
    let _ = writeln!(out, "vox_to_ras:");
    for row in &h.vox_to_ras {
        let _ = writeln!(out, "  {:>10.4} {:>10.4} {:>10.4} {:>10.4}", row[0], row[1], row[2], row[3]);
    }
    out
}

/// Header of the first file plus the streamline count over all files.
pub fn trk_info(src: Source) -> Result<(TrkHeader, u64)> {
    let mut reader = TrkReader::concatenated(src.reader, &src.sizes)?;
    let header = reader.header().clone();
    let mut count = 0;
    while reader.next_streamline()?.is_some() {
        count += 1;
    }
    Ok((header, count))
}

pub fn trk_histogram(src: Source, bins: Option<usize>) -> Result<LengthHistogram> {
    let reader = TrkReader::concatenated(src.reader, &src.sizes)?;
    Ok(length_histogram(reader, bins.unwrap_or(DEFAULT_BINS))?)
}

#[derive(Debug, Serialize)]
pub struct HistogramRow {
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

pub fn histogram_rows(h: &LengthHistogram) -> Vec<HistogramRow> {
    h.counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramRow {
            bin: i,
            lower: h.edges[i],
            upper: h.edges[i + 1],
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rollread_core::trk::write_trk;
    use rollread_core::Streamline;

    #[test]
    fn model_sweep_has_one_row_per_block_count() {
        let p = ModelParams::new(1, 1e9, 0.1, 1e8, 1e-8);
        let rows = cmd_model(&p, true).unwrap();
        assert_eq!(rows.len(), 1024);
        assert!(rows.iter().all(|r| r.speedup >= 1.0 && r.speedup < 2.0));
        assert_eq!(rows[9].n_blocks, 10);
        let zero = cmd_model(&ModelParams::new(8, 1e9, 0.1, 1e8, 0.0), false).unwrap();
        assert_eq!(zero[0].speedup, 1.0);
        assert!(format_model_table(&zero).contains("speedup"));
    }

    #[test]
    fn info_and_histogram_over_local_files() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<Streamline> = (0..20)
            .map(|i| Streamline::new(vec![[0.0; 3], [i as f32 + 0.5, 0.0, 0.0]]))
            .collect();
        let a = dir.path().join("a.trk");
        let b = dir.path().join("b.trk");
        std::fs::write(&a, write_trk(&TrkHeader::default(), &lines[..5]).unwrap()).unwrap();
        std::fs::write(&b, write_trk(&TrkHeader::default(), &lines[5..]).unwrap()).unwrap();
        let (h, count) = trk_info(local_source(&[a.clone(), b.clone()]).unwrap()).unwrap();
        assert_eq!(count, 20);
        assert_eq!(h.n_count, 5);
        assert!(format_header(&h).contains("magic:          TRACK"));
        let hist = trk_histogram(local_source(&[a, b]).unwrap(), Some(20)).unwrap();
        assert_eq!(hist.total(), 20);
        assert_eq!(histogram_rows(&hist).len(), 20);
    }
}
