//! Shared setup for the benchmarks: an in-memory `.trk` shard and a
//! zero-latency simulated store holding random objects.

use std::sync::Arc;

use rollread_cli::fixture::generate_shard_bytes;
use rollread_core::{FileSet, ObjectRef, ObjectStore, SimStore, SimStoreParams};

pub const MIB: u64 = 1 << 20;

pub fn trk_shard(bytes: u64) -> Vec<u8> {
    generate_shard_bytes(7, 0, bytes).expect("fixture shard")
}

/// Objects served with no latency and effectively unlimited bandwidth, so
/// timings measure the library rather than the simulated link.
pub struct LocalObjects {
    pub dir: tempfile::TempDir,
    pub store: Arc<dyn ObjectStore>,
    pub keys: Vec<String>,
}

impl LocalObjects {
    pub fn new(files: usize, size: usize) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let params = SimStoreParams::new(dir.path(), 0.0, 1e15).expect("sim params");
        let store: Arc<dyn ObjectStore> = Arc::new(SimStore::new(params).expect("sim store"));
        let keys = (0..files)
            .map(|i| {
                let key = format!("obj-{i}");
                let data: Vec<u8> = (0..size).map(|j| (j * 31 + i) as u8).collect();
                std::fs::write(dir.path().join(&key), data).expect("write object");
                key
            })
            .collect();
        LocalObjects { dir, store, keys }
    }

    pub fn file_set(&self, blocksize: u64) -> FileSet {
        let refs = self
            .keys
            .iter()
            .map(|k| ObjectRef::new(self.store.clone(), k.clone()).expect("object ref"))
            .collect();
        FileSet::new(refs, blocksize).expect("file set")
    }

    pub fn total(&self) -> u64 {
        self.file_set(MIB).total_size()
    }
}
