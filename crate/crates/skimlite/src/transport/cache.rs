//! Byte-budgeted prefetch cache for compressed baskets.
//!
//! On a miss against a remote source the cache batch-fetches upcoming
//! baskets of the enabled branches, coalescing byte-adjacent baskets into
//! single range requests. Against a local source it does nothing: every
//! basket is one direct read, unless the override flag forces coalescing.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::colfmt::DatasetHeader;
use crate::error::Result;
use crate::transport::RangeSource;

/// Default cache budget: 100 MiB.
pub const DEFAULT_CACHE_BUDGET: u64 = 100 * 1024 * 1024;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub resident_bytes: u64,
    pub inserted: u64,
    pub evicted: u64,
}

/// `(branch index, basket index)` cache key.
type Key = (u32, u32);

struct Entry {
    bytes: Arc<Vec<u8>>,
    last_used: u64,
}

struct Inner {
    store: HashMap<Key, Entry>,
    resident: u64,
    tick: u64,
    enabled: Vec<u32>,
    window: (u64, u64),
    stats: CacheStats,
}

pub struct PrefetchCache {
    budget: u64,
    /// Coalesce even against local sources.
    force_local_coalesce: bool,
    inner: Mutex<Inner>,
}

impl PrefetchCache {
    pub fn new(budget: u64) -> PrefetchCache {
        PrefetchCache {
            budget,
            force_local_coalesce: false,
            inner: Mutex::new(Inner {
                store: HashMap::new(),
                resident: 0,
                tick: 0,
                enabled: Vec::new(),
                window: (0, 0),
                stats: CacheStats::default(),
            }),
        }
    }

    /// Overrides local-mode fidelity: prefetch and coalesce even for local
    /// sources.
    pub fn with_local_coalescing(mut self) -> PrefetchCache {
        self.force_local_coalesce = true;
        self
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Branches eligible for window prefetching.
    pub fn set_enabled_branches(&self, branches: impl IntoIterator<Item = u32>) {
        let mut enabled: Vec<u32> = branches.into_iter().collect();
        enabled.sort_unstable();
        enabled.dedup();
        self.inner.lock().unwrap().enabled = enabled;
    }

    pub fn stats(&self) -> CacheStats {
        let inner = self.inner.lock().unwrap();
        let mut stats = inner.stats;
        stats.resident_bytes = inner.resident;
        stats
    }

    /// Last prefetch window, as an entry range.
    pub fn window(&self) -> (u64, u64) {
        self.inner.lock().unwrap().window
    }

    fn coalescing_enabled(&self, source: &dyn RangeSource) -> bool {
        !source.is_local() || self.force_local_coalesce
    }

    /// Returns the compressed bytes of one basket.
    ///
    /// A resident basket never touches the network. On a miss with
    /// `allow_window` set, a budget-sized window of the enabled branches is
    /// prefetched starting at this basket's first event; otherwise (or if
    /// the window did not cover it) the basket is fetched directly.
    pub fn get_basket(
        &self,
        source: &dyn RangeSource,
        header: &DatasetHeader,
        branch: u32,
        basket: u32,
        allow_window: bool,
    ) -> Result<Arc<Vec<u8>>> {
        if !self.coalescing_enabled(source) {
            // Local-mode fidelity: no caching, every basket is one read.
            let bref = &header.branches[branch as usize].baskets[basket as usize];
            return Ok(Arc::new(
                source.read_range(bref.file_offset, bref.compressed_len as u64)?,
            ));
        }

        {
            let mut inner = self.inner.lock().unwrap();
            inner.tick += 1;
            let tick = inner.tick;
            if let Some(entry) = inner.store.get_mut(&(branch, basket)) {
                entry.last_used = tick;
                let bytes = Arc::clone(&entry.bytes);
                inner.stats.hits += 1;
                return Ok(bytes);
            }
            inner.stats.misses += 1;
        }

        if allow_window {
            let start = header.branches[branch as usize].first_event[basket as usize];
            let enabled = self.inner.lock().unwrap().enabled.clone();
            self.prefetch_window(source, header, &enabled, (start, header.n_events))?;
            let mut inner = self.inner.lock().unwrap();
            inner.tick += 1;
            let tick = inner.tick;
            if let Some(entry) = inner.store.get_mut(&(branch, basket)) {
                entry.last_used = tick;
                return Ok(Arc::clone(&entry.bytes));
            }
        }

        // Direct fallback for disabled branches or over-budget windows.
        let bref = &header.branches[branch as usize].baskets[basket as usize];
        let bytes = Arc::new(source.read_range(bref.file_offset, bref.compressed_len as u64)?);
        self.insert(branch, basket, Arc::clone(&bytes));
        Ok(bytes)
    }

    /// Makes resident the baskets of `branches` intersecting `entry_range`,
    /// bounded by the byte budget, coalescing adjacent ranges into single
    /// requests.
    pub fn prefetch_window(
        &self,
        source: &dyn RangeSource,
        header: &DatasetHeader,
        branches: &[u32],
        entry_range: (u64, u64),
    ) -> Result<()> {
        if !self.coalescing_enabled(source) {
            return Ok(());
        }
        let (start, end) = entry_range;
        // Candidate baskets in event order so the window advances evenly
        // across branches; cut off at the byte budget.
        let mut candidates: Vec<(u64, Key)> = Vec::new();
        for &bi in branches {
            let meta = &header.branches[bi as usize];
            for (k, &fe) in meta.first_event.iter().enumerate() {
                let (s, e) = meta.basket_event_range(k, header.n_events);
                if e > start && s < end {
                    candidates.push((fe, (bi, k as u32)));
                }
            }
        }
        candidates.sort_unstable();
        let mut picked = Vec::new();
        let mut budgeted = 0u64;
        let mut covered_end = start;
        for (fe, key) in candidates {
            let bref = &header.branches[key.0 as usize].baskets[key.1 as usize];
            if budgeted + bref.compressed_len as u64 > self.budget && !picked.is_empty() {
                break;
            }
            budgeted += bref.compressed_len as u64;
            covered_end = covered_end.max(fe + bref.n_entries as u64);
            picked.push(key);
        }
        self.inner.lock().unwrap().window = (start, covered_end);
        self.prefetch_baskets(source, header, &picked)
    }

    /// Fetches an explicit basket set, coalescing byte-adjacent baskets.
    pub fn prefetch_baskets(
        &self,
        source: &dyn RangeSource,
        header: &DatasetHeader,
        items: &[Key],
    ) -> Result<()> {
        let mut todo: Vec<(u64, u64, Key)> = Vec::new();
        {
            let inner = self.inner.lock().unwrap();
            for &key in items {
                if inner.store.contains_key(&key) {
                    continue;
                }
                let bref = &header.branches[key.0 as usize].baskets[key.1 as usize];
                todo.push((bref.file_offset, bref.compressed_len as u64, key));
            }
        }
        todo.sort_unstable();
        todo.dedup();

        let coalesce = self.coalescing_enabled(source);
        let mut i = 0;
        while i < todo.len() {
            // Grow a run of byte-adjacent baskets.
            let run_start = todo[i].0;
            let mut run_end = todo[i].0 + todo[i].1;
            let mut j = i + 1;
            while coalesce && j < todo.len() && todo[j].0 == run_end {
                run_end += todo[j].1;
                j += 1;
            }
            let bytes = source.read_range(run_start, run_end - run_start)?;
            let mut cursor = 0usize;
            for &(_, len, key) in &todo[i..j] {
                let piece = bytes[cursor..cursor + len as usize].to_vec();
                cursor += len as usize;
                self.insert(key.0, key.1, Arc::new(piece));
            }
            i = j;
        }
        Ok(())
    }

    fn insert(&self, branch: u32, basket: u32, bytes: Arc<Vec<u8>>) {
        let len = bytes.len() as u64;
        let mut inner = self.inner.lock().unwrap();
        if len > self.budget {
            return; // larger than the whole budget; serve without caching
        }
        inner.tick += 1;
        let tick = inner.tick;
        if let Some(old) = inner.store.insert((branch, basket), Entry { bytes, last_used: tick }) {
            inner.resident -= old.bytes.len() as u64;
        }
        inner.resident += len;
        inner.stats.inserted += 1;
        while inner.resident > self.budget {
            // LRU eviction of whole baskets.
            let victim = inner
                .store
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(&k, _)| k)
                .expect("resident > 0 implies entries");
            let removed = inner.store.remove(&victim).unwrap();
            inner.resident -= removed.bytes.len() as u64;
            inner.stats.evicted += 1;
        }
    }
}

impl Default for PrefetchCache {
    fn default() -> Self {
        PrefetchCache::new(DEFAULT_CACHE_BUDGET)
    }
}
