//! Deterministic synthetic tractography shards.

use std::fs::{self, File};
use std::io::{BufWriter, Cursor, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rollread_core::trk::{encode_record, TrkReader, HEADER_SIZE};
use rollread_core::{Streamline, TrkHeader};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

const MIN_POINTS: usize = 20;
const MAX_POINTS: usize = 200;
const STEP_MM: f32 = 0.5;
const N_COUNT_OFFSET: u64 = 988;

/// Header used for generated shards: a 1.25 mm isotropic grid.
pub fn fixture_header() -> TrkHeader {
    TrkHeader {
        dim: [145, 174, 145],
        voxel_size: [1.25; 3],
        vox_to_ras: [
            [1.25, 0.0, 0.0, -90.0],
            [0.0, 1.25, 0.0, -126.0],
            [0.0, 0.0, 1.25, -72.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
        ..TrkHeader::default()
    }
}

fn random_streamline(rng: &mut ChaCha8Rng, n: usize) -> Streamline {
    let mut p = [0.0f32; 3].map(|_| rng.gen_range(20.0..160.0));
    let mut dir = [0.0f32; 3].map(|_| rng.gen_range(-1.0..1.0));
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(p);
        for d in &mut dir {
            *d += rng.gen_range(-0.3..0.3);
        }
        let norm = dir.iter().map(|d| d * d).sum::<f32>().sqrt().max(1e-6);
        for (c, d) in p.iter_mut().zip(&dir) {
            *c += STEP_MM * d / norm;
        }
    }
    Streamline::new(points)
}

/// Writes one shard of roughly `target` bytes: the file ends within one
/// record of the target and never exceeds it. Returns (bytes, streamlines).
pub fn generate_shard<W: Write + Seek>(rng: &mut ChaCha8Rng, target: u64, mut w: W) -> Result<(u64, u64)> {
    if target < HEADER_SIZE as u64 {
        return Err(HarnessError::Config(format!(
            "shard size must be at least {HEADER_SIZE} bytes, got {target}"
        )));
    }
    let header = fixture_header();
    w.write_all(&header.to_bytes())?;
    let mut written = HEADER_SIZE as u64;
    let mut count: u64 = 0;
    let mut rec = Vec::new();
    loop {
        let remaining = target - written;
        if remaining < 16 {
            break;
        }
        let room = ((remaining - 4) / 12) as usize;
        let n = rng.gen_range(MIN_POINTS..=MAX_POINTS).min(room);
        encode_record(&random_streamline(rng, n), 0, 0, &mut rec)?;
        w.write_all(&rec)?;
        written += rec.len() as u64;
        count += 1;
    }
    let n_count = i32::try_from(count).unwrap_or(0);
    w.seek(SeekFrom::Start(N_COUNT_OFFSET))?;
    w.write_all(&n_count.to_le_bytes())?;
    w.seek(SeekFrom::Start(written))?;
    w.flush()?;
    Ok((written, count))
}

/// Shard `index` of the fixture seeded with `seed`; independent of how many
/// shards are generated.
pub fn shard_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_shard_bytes(seed: u64, index: usize, target: u64) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    generate_shard(&mut shard_rng(seed, index), target, &mut out)?;
    Ok(out.into_inner())
}

#[derive(Debug, Clone)]
pub struct ShardInfo {
    pub key: String,
    pub path: PathBuf,
    pub bytes: u64,
    pub streamlines: u64,
}

pub fn shard_key(prefix: &str, index: usize) -> String {
    format!("{prefix}shard-{index:03}.trk")
}

/// Generates `shards` files under `root`, keyed `<prefix>shard-NNN.trk`.
pub fn generate_fixture(root: &Path, prefix: &str, shards: usize, shard_size: u64, seed: u64) -> Result<Vec<ShardInfo>> {
    (0..shards)
        .map(|i| {
            let key = shard_key(prefix, i);
            let path = root.join(&key);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let tmp = path.with_extension("trk.partial");
            let (bytes, streamlines) = {
                let mut w = BufWriter::new(File::create(&tmp)?);
                let out = generate_shard(&mut shard_rng(seed, i), shard_size, &mut w)?;
                w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
                out
            };
            fs::rename(&tmp, &path)?;
            Ok(ShardInfo {
                key,
                path,
                bytes,
                streamlines,
            })
        })
        .collect()
}

/// Reuses a previously generated fixture when a marker recording the same
/// parameters is present; otherwise generates it.
pub fn ensure_local_fixture(root: &Path, name: &str, shards: usize, shard_size: u64, seed: u64) -> Result<Vec<String>> {
    let prefix = format!("{name}/");
    let marker = root.join(name).join(".complete");
    let expected = format!("{shards} {shard_size} {seed}\n");
    let keys: Vec<String> = (0..shards).map(|i| shard_key(&prefix, i)).collect();
    let reusable = fs::read_to_string(&marker).is_ok_and(|m| m == expected)
        && keys.iter().all(|k| root.join(k).is_file());
    if !reusable {
        log::info!("generating fixture {name}: {shards} x {shard_size} bytes");
        generate_fixture(root, &prefix, shards, shard_size, seed)?;
        fs::write(&marker, expected)?;
    }
    Ok(keys)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Splits one `.trk` file into `k` contiguous shards of similar size, each
/// with its own header and streamline count.
pub fn split_trk(raw: &[u8], k: usize) -> Result<Vec<Vec<u8>>> {
    if k == 0 {
        return Err(HarnessError::Config("cannot split into zero shards".into()));
    }
    let reader = TrkReader::new(Cursor::new(raw))?;
    let header = reader.header().clone();
    let (ns, np) = (header.scalars_per_point(), header.properties_per_streamline());
    let records: Vec<Streamline> = reader.collect::<Result<_, _>>()?;
    let body: u64 = records.iter().map(|s| s.encoded_len(ns)).sum();
    let mut groups: Vec<Vec<&Streamline>> = vec![Vec::new(); k];
    let mut start = 0u64;
    for s in &records {
        let g = (start * k as u64).checked_div(body).unwrap_or(0) as usize;
        groups[g.min(k - 1)].push(s);
        start += s.encoded_len(ns);
    }
    let mut rec = Vec::new();
    groups
        .into_iter()
        .map(|g| {
            let mut h = header.clone();
            h.n_count = g.len() as i32;
            let mut out = h.to_bytes().to_vec();
            for s in g {
                encode_record(s, ns, np, &mut rec)?;
                out.extend_from_slice(&rec);
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(raw: &[u8]) -> Vec<Streamline> {
        TrkReader::new(Cursor::new(raw)).unwrap().collect::<Result<_, _>>().unwrap()
    }

    #[test]
    fn seeded_output_is_identical() {
        let a = generate_shard_bytes(7, 0, 200_000).unwrap();
        let b = generate_shard_bytes(7, 0, 200_000).unwrap();
        let c = generate_shard_bytes(8, 0, 200_000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, generate_shard_bytes(7, 1, 200_000).unwrap());
    }

    #[test]
    fn size_lands_within_one_record() {
        for target in [1000u64, 1015, 1016, 50_000, 1 << 20] {
            let raw = generate_shard_bytes(1, 0, target).unwrap();
            let len = raw.len() as u64;
            assert!(len <= target);
            assert!(target - len < 4 + 12 * MAX_POINTS as u64, "{target} -> {len}");
            let recs = records(&raw);
            let declared = i32::from_le_bytes(raw[988..992].try_into().unwrap());
            assert_eq!(declared as usize, recs.len());
        }
    }

    #[test]
    fn tiny_targets_are_rejected() {
        assert!(generate_shard_bytes(1, 0, 999).is_err());
    }

    #[test]
    fn nine_way_split_preserves_records() {
        let raw = generate_shard_bytes(3, 0, 400_000).unwrap();
        let parts = split_trk(&raw, 9).unwrap();
        assert_eq!(parts.len(), 9);
        let joined: Vec<Streamline> = parts.iter().flat_map(|p| records(p)).collect();
        assert_eq!(joined, records(&raw));
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo < 2 * (4 + 12 * MAX_POINTS), "{sizes:?}");
    }

    #[test]
    fn fixture_files_and_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let keys = ensure_local_fixture(dir.path(), "fx", 3, 30_000, 5).unwrap();
        assert_eq!(keys, vec!["fx/shard-000.trk", "fx/shard-001.trk", "fx/shard-002.trk"]);
        let first = sha256_file(&dir.path().join(&keys[1])).unwrap();
        let modified = fs::metadata(dir.path().join(&keys[1])).unwrap().modified().unwrap();
        ensure_local_fixture(dir.path(), "fx", 3, 30_000, 5).unwrap();
        assert_eq!(fs::metadata(dir.path().join(&keys[1])).unwrap().modified().unwrap(), modified);
        assert_eq!(first, sha256_file(&dir.path().join(&keys[1])).unwrap());
        // Shard i does not depend on the shard count.
        let more = generate_fixture(dir.path(), "other/", 4, 30_000, 5).unwrap();
        assert_eq!(sha256_file(&more[1].path).unwrap(), first);
    }
}
