//! Rolling prefetch for sequential reads of large objects in remote storage.
//!
//! A [`StreamHandle`] presents a set of remote objects as one contiguous byte
//! stream. A background worker copies fixed-size blocks into bounded local
//! cache locations ahead of the reader, and a second worker deletes blocks
//! once they have been read, so local storage never needs to hold the whole
//! data set.
//!
//! ```no_run
//! use std::io::Read;
//! use rollread_core::{build_tiers, open_store, refs_with_prefix, FileSet, StreamHandle, StreamOptions, TierSpec};
//!
//! # fn main() -> rollread_core::Result<()> {
//! let store = open_store("sim:///data/objects?latency=0.01&bandwidth=2e8")?;
//! let files = FileSet::new(refs_with_prefix(&store, "shard-")?, 64 << 20)?;
//! let tiers = build_tiers(&["/dev/shm/cache:1073741824".parse()?])?;
//! let mut stream = StreamHandle::open(files, tiers, StreamOptions::default())?;
//! let mut buf = vec![0; 1 << 16];
//! while stream.read(&mut buf)? > 0 {}
//! stream.close()?;
//! # Ok(()) }
//! ```

pub mod cache;
pub mod error;
pub mod evict;
pub mod model;
pub mod prefetch;
pub mod reader;
pub mod store;
pub mod trk;

pub use cache::{
    build_tiers, choose_location, order_tiers, parse_tier_list, BlockKey, BlockRecord, BlockState, CacheLocation,
    TierSpec,
};
pub use error::{Error, Result};
pub use evict::{get_all_blocks, run_evictor, EvictionPlan, EvictionReport, DEFAULT_EVICT_INTERVAL};
pub use model::{optimal_blocks, speedup, ModelParams, ModelSummary};
pub use prefetch::{
    fetch_next_block, run_prefetch, FileSet, Outcome, PrefetchOptions, PrefetchReport, PrefetchState,
};
pub use reader::{ReadCounters, ReadReport, StreamHandle, StreamOptions};
pub use store::{open_store, refs_with_prefix, ObjectRef, ObjectStore, SimStore, SimStoreParams};
pub use trk::{Streamline, TrkError, TrkHeader, TrkReader};
