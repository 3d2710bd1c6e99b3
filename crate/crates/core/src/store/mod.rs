//! Byte-range access to remote objects.
//!
//! Two backends are provided: [`SimStore`], which serves plain files from a
//! local directory while injecting a fixed per-request latency and a fixed
//! bandwidth, and [`S3Store`], an S3-compatible HTTP client issuing ranged
//! `GET` requests.

mod s3;
mod sigv4;
mod sim;

use std::fmt;
use std::io::Write;
use std::sync::{Arc, OnceLock};

pub use s3::{S3Config, S3Store};
pub use sigv4::Credentials;
pub use sim::{sim_delay, SimStore, SimStoreParams, DEFAULT_BANDWIDTH, DEFAULT_LATENCY};

use crate::error::{Error, Result};

/// A store of immutable objects addressed by key.
///
/// Implementations must be safe for concurrent range reads from several
/// workers.
pub trait ObjectStore: Send + Sync + fmt::Debug {
    /// URI identifying this store, e.g. `sim:///data?latency=0.01` or `s3://bucket`.
    fn uri(&self) -> String;

    fn object_size(&self, key: &str) -> Result<u64>;

    /// Streams bytes `[offset, min(offset + length, size))` of `key` into `sink`
    /// and returns how many bytes were written.
    ///
    /// Fails with [`Error::OutOfRange`] when `offset` is at or past the end of
    /// the object.
    fn read_range_into(
        &self,
        key: &str,
        offset: u64,
        length: u64,
        sink: &mut dyn Write,
    ) -> Result<u64>;

    fn get_range(&self, key: &str, offset: u64, length: u64) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(usize::try_from(length).unwrap_or(0).min(1 << 28));
        self.read_range_into(key, offset, length, &mut buf)?;
        Ok(buf)
    }

    /// Keys starting with `prefix`, sorted lexicographically.
    fn list_keys(&self, prefix: &str) -> Result<Vec<String>>;
}

/// Opens a store from its URI.
///
/// Supported schemes are `sim://<dir>[?latency=<s>&bandwidth=<bytes/s>]` and
/// `s3://<bucket>`; the latter reads credentials, region and endpoint from the
/// standard `AWS_*` environment variables.
pub fn open_store(uri: &str) -> Result<Arc<dyn ObjectStore>> {
    if uri.starts_with("sim://") {
        Ok(Arc::new(SimStore::from_uri(uri)?))
    } else if uri.starts_with("s3://") {
        Ok(Arc::new(S3Store::from_uri(uri)?))
    } else {
        Err(Error::UnsupportedUri(uri.to_string()))
    }
}

/// A handle on one remote object. Cloning shares the cached size.
#[derive(Clone)]
pub struct ObjectRef {
    store: Arc<dyn ObjectStore>,
    key: String,
    size: Arc<OnceLock<u64>>,
}

impl ObjectRef {
    pub fn new(store: Arc<dyn ObjectStore>, key: impl Into<String>) -> Result<Self> {
        let key = key.into();
        if key.is_empty() {
            return Err(Error::InvalidArgument("object key must not be empty".into()));
        }
        Ok(ObjectRef {
            store,
            key,
            size: Arc::new(OnceLock::new()),
        })
    }

    pub fn store(&self) -> &Arc<dyn ObjectStore> {
        &self.store
    }

    pub fn store_uri(&self) -> String {
        self.store.uri()
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    /// Payload length, queried once and cached.
    pub fn size(&self) -> Result<u64> {
        if let Some(size) = self.size.get() {
            return Ok(*size);
        }
        let size = self.store.object_size(&self.key)?;
        Ok(*self.size.get_or_init(|| size))
    }

    pub fn get_range(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        self.check_range(offset, length)?;
        self.store.get_range(&self.key, offset, length)
    }

    pub fn read_range_into(&self, offset: u64, length: u64, sink: &mut dyn Write) -> Result<u64> {
        self.check_range(offset, length)?;
        self.store.read_range_into(&self.key, offset, length, sink)
    }

    fn check_range(&self, offset: u64, length: u64) -> Result<()> {
        if length == 0 {
            return Err(Error::InvalidArgument("range length must be at least 1".into()));
        }
        let size = self.size()?;
        if offset >= size {
            return Err(Error::OutOfRange { offset, size });
        }
        Ok(())
    }
}

impl fmt::Debug for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectRef")
            .field("store", &self.store.uri())
            .field("key", &self.key)
            .field("size", &self.size.get())
            .finish()
    }
}

/// Builds refs for every key under `prefix`, in key order.
pub fn refs_with_prefix(store: &Arc<dyn ObjectStore>, prefix: &str) -> Result<Vec<ObjectRef>> {
    store
        .list_keys(prefix)?
        .into_iter()
        .map(|key| ObjectRef::new(store.clone(), key))
        .collect()
}
