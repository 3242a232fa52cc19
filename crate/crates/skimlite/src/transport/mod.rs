//! Range-access layer between the engine and storage: local and HTTP byte
//! sources with exact request accounting, a prefetch cache, a token-bucket
//! throttle, and the byte-range file server.

pub mod cache;
pub mod http;
pub mod httpd;
pub mod server;
pub mod throttle;

pub use cache::{CacheStats, PrefetchCache, DEFAULT_CACHE_BUDGET};
pub use http::{HttpClient, HttpRangeSource, HttpResponse};
pub use server::{serve, start_server, ServeConfig, ServerHandle};
pub use throttle::{Throttle, ThrottledReader};

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Result, SkimError};

/// Exact read accounting: every issued request and every payload byte.
#[derive(Debug, Default)]
pub struct Counters {
    requests: AtomicU64,
    bytes: AtomicU64,
}

impl Counters {
    pub fn record(&self, len: u64) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.bytes.fetch_add(len, Ordering::Relaxed);
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn bytes(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }
}

/// A byte-range readable data source.
pub trait RangeSource: Send + Sync {
    /// Total size in bytes.
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact bytes of `[offset, offset + len)`.
    fn read_range(&self, offset: u64, len: u64) -> Result<Vec<u8>>;

    fn counters(&self) -> &Counters;

    /// Local sources get no prefetch coalescing (each basket is one read)
    /// unless the cache's override flag is set.
    fn is_local(&self) -> bool {
        false
    }
}

/// Fetches `[offset, offset + len)` from a source.
pub fn range_get(source: &dyn RangeSource, offset: u64, len: u64) -> Result<Vec<u8>> {
    source.read_range(offset, len)
}

pub(crate) fn check_range(offset: u64, len: u64, size: u64) -> Result<()> {
    if offset.checked_add(len).is_none_or(|end| end > size) {
        return Err(SkimError::OutOfRange { offset, len, size });
    }
    Ok(())
}

/// A local file opened for positioned reads. An optional per-read latency
/// models seek cost on a storage backend.
pub struct LocalFileSource {
    file: File,
    size: u64,
    counters: Counters,
    read_latency: Duration,
    path: PathBuf,
}

impl LocalFileSource {
    pub fn open(path: impl AsRef<Path>) -> Result<LocalFileSource> {
        Self::open_with_latency(path, Duration::ZERO)
    }

    pub fn open_with_latency(path: impl AsRef<Path>, read_latency: Duration) -> Result<LocalFileSource> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let size = file.metadata()?.len();
        Ok(LocalFileSource {
            file,
            size,
            counters: Counters::default(),
            read_latency,
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RangeSource for LocalFileSource {
    fn len(&self) -> u64 {
        self.size
    }

    fn read_range(&self, offset: u64, len: u64) -> Result<Vec<u8>> {
        check_range(offset, len, self.size)?;
        if !self.read_latency.is_zero() {
            std::thread::sleep(self.read_latency);
        }
        let mut buf = vec![0u8; len as usize];
        self.file.read_exact_at(&mut buf, offset)?;
        self.counters.record(len);
        Ok(buf)
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn is_local(&self) -> bool {
        true
    }
}

/// An in-memory source; behaves like a remote source for cache purposes
/// unless constructed with [`MemSource::local`].
pub struct MemSource {
    data: Vec<u8>,
    counters: Counters,
    local: bool,
}

impl MemSource {
    pub fn new(data: Vec<u8>) -> MemSource {
        MemSource { data, counters: Counters::default(), local: false }
    }

    pub fn local(data: Vec<u8>) -> MemSource {
        MemSource { data, counters: Counters::default(), local: true }
    }
}

impl RangeSource for MemSource {
    fn len(&self) -> u64 {
        self.data.len() as u64
    }

    fn read_range(&self, offset: u64, len: u64) -> Result<Vec<u8>> {
        check_range(offset, len, self.len())?;
        self.counters.record(len);
        Ok(self.data[offset as usize..(offset + len) as usize].to_vec())
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn is_local(&self) -> bool {
        self.local
    }
}

/// Wraps a source and rejects reads that touch byte ranges outside an
/// allow-list (or inside a deny-list) while armed. Used to prove read
/// isolation properties.
pub struct GuardedSource {
    inner: Arc<dyn RangeSource>,
    rules: std::sync::RwLock<GuardRules>,
    violations: AtomicU64,
}

#[derive(Default)]
struct GuardRules {
    armed: bool,
    /// When non-empty, any read overlapping one of these ranges fails.
    denied: Vec<(u64, u64)>,
    /// When set, any read not fully inside one of these ranges fails.
    allowed: Option<Vec<(u64, u64)>>,
}

impl GuardedSource {
    pub fn new(inner: Arc<dyn RangeSource>) -> GuardedSource {
        GuardedSource {
            inner,
            rules: std::sync::RwLock::new(GuardRules::default()),
            violations: AtomicU64::new(0),
        }
    }

    pub fn deny_ranges(&self, ranges: Vec<(u64, u64)>) {
        let mut rules = self.rules.write().unwrap();
        rules.denied = ranges;
        rules.armed = true;
    }

    pub fn allow_only(&self, ranges: Vec<(u64, u64)>) {
        let mut rules = self.rules.write().unwrap();
        rules.allowed = Some(ranges);
        rules.armed = true;
    }

    pub fn disarm(&self) {
        self.rules.write().unwrap().armed = false;
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }
}

impl RangeSource for GuardedSource {
    fn len(&self) -> u64 {
        self.inner.len()
    }

    fn read_range(&self, offset: u64, len: u64) -> Result<Vec<u8>> {
        let rules = self.rules.read().unwrap();
        if rules.armed && len > 0 {
            let end = offset + len;
            let overlaps =
                |&(s, e): &(u64, u64)| offset < e && s < end;
            if rules.denied.iter().any(overlaps) {
                self.violations.fetch_add(1, Ordering::Relaxed);
                return Err(SkimError::transport(format!(
                    "guarded source: read [{offset}, +{len}) touches a denied range"
                )));
            }
            if let Some(allowed) = &rules.allowed {
                let inside = allowed.iter().any(|&(s, e)| offset >= s && end <= e);
                if !inside {
                    self.violations.fetch_add(1, Ordering::Relaxed);
                    return Err(SkimError::transport(format!(
                        "guarded source: read [{offset}, +{len}) outside the allowed ranges"
                    )));
                }
            }
        }
        drop(rules);
        self.inner.read_range(offset, len)
    }

    fn counters(&self) -> &Counters {
        self.inner.counters()
    }

    fn is_local(&self) -> bool {
        self.inner.is_local()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mem_source_reads_and_counts() {
        let src = MemSource::new((0u8..100).collect());
        assert_eq!(src.read_range(10, 5).unwrap(), vec![10, 11, 12, 13, 14]);
        assert_eq!(src.counters().requests(), 1);
        assert_eq!(src.counters().bytes(), 5);
        assert!(matches!(
            src.read_range(99, 2),
            Err(SkimError::OutOfRange { .. })
        ));
        // failed reads are not accounted
        assert_eq!(src.counters().requests(), 1);
    }

    #[test]
    fn local_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        std::fs::write(&path, [1u8, 2, 3, 4, 5]).unwrap();
        let src = LocalFileSource::open(&path).unwrap();
        assert_eq!(src.len(), 5);
        assert_eq!(src.read_range(0, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        assert!(src.read_range(5, 1).is_err());
        assert!(src.is_local());
    }

    #[test]
    fn guard_blocks_denied_ranges() {
        let inner = Arc::new(MemSource::new(vec![0u8; 100]));
        let guard = GuardedSource::new(inner);
        guard.deny_ranges(vec![(50, 60)]);
        assert!(guard.read_range(0, 50).is_ok());
        assert!(guard.read_range(55, 1).is_err());
        assert!(guard.read_range(49, 2).is_err());
        assert_eq!(guard.violations(), 2);
        guard.disarm();
        assert!(guard.read_range(55, 1).is_ok());
    }

    #[test]
    fn guard_allow_list() {
        let inner = Arc::new(MemSource::new(vec![0u8; 100]));
        let guard = GuardedSource::new(inner);
        guard.allow_only(vec![(0, 10), (20, 30)]);
        assert!(guard.read_range(0, 10).is_ok());
        assert!(guard.read_range(25, 5).is_ok());
        assert!(guard.read_range(5, 10).is_err());
    }
}
