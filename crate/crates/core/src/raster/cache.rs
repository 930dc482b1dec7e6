//! Lazily baked (block, level) entries with LRU eviction, request deduplication and prefetch.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::bake::BakedLevel;
use crate::error::{Error, Result};

pub type CacheKey = (u32, usize);

/// Where cache misses are filled from.
pub trait AssetSource: Send + Sync {
    /// Produces the entry and reports how many encoder evaluations it took (0 when pre-baked).
    fn bake(&self, block: u32, level: usize) -> Result<(BakedLevel, u64)>;
    fn contains(&self, block: u32, level: usize) -> bool;
    /// Blocks sharing a face with `block`.
    fn neighbors(&self, block: u32) -> Vec<u32>;
}

type Slot = Arc<OnceLock<std::result::Result<Arc<BakedLevel>, String>>>;

struct Entry {
    slot: Slot,
    last_used: u64,
}

#[derive(Default)]
struct State {
    entries: HashMap<CacheKey, Entry>,
    prefetch: VecDeque<CacheKey>,
    tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub bakes: u64,
    pub encoder_evaluations: u64,
    pub evictions: u64,
    pub resident_pages: usize,
}

pub struct AtlasCache {
    capacity_pages: usize,
    state: Mutex<State>,
    hits: AtomicU64,
    misses: AtomicU64,
    bakes: AtomicU64,
    evaluations: AtomicU64,
    evictions: AtomicU64,
}

fn pages_of(level: &BakedLevel) -> usize {
    level.atlas.pages.max(1)
}

impl AtlasCache {
    pub fn new(capacity_pages: usize) -> Self {
        Self {
            capacity_pages: capacity_pages.max(1),
            state: Mutex::new(State::default()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            bakes: AtomicU64::new(0),
            evaluations: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    pub fn capacity_pages(&self) -> usize {
        self.capacity_pages
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            bakes: self.bakes.load(Ordering::Relaxed),
            encoder_evaluations: self.evaluations.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            resident_pages: self.resident_pages(),
        }
    }

    /// Keys of fully baked entries, least recently used first.
    pub fn resident(&self) -> Vec<CacheKey> {
        let st = self.state.lock().expect("cache lock");
        let mut keys: Vec<(u64, CacheKey)> = st
            .entries
            .iter()
            .filter(|(_, e)| matches!(e.slot.get(), Some(Ok(_))))
            .map(|(k, e)| (e.last_used, *k))
            .collect();
        keys.sort();
        keys.into_iter().map(|(_, k)| k).collect()
    }

    pub fn resident_pages(&self) -> usize {
        let st = self.state.lock().expect("cache lock");
        st.entries
            .values()
            .filter_map(|e| match e.slot.get() {
                Some(Ok(l)) => Some(pages_of(l)),
                _ => None,
            })
            .sum()
    }

    pub fn prefetch_queue(&self) -> Vec<CacheKey> {
        self.state
            .lock()
            .expect("cache lock")
            .prefetch
            .iter()
            .copied()
            .collect()
    }

    /// Drops all queued prefetches.
    pub fn cancel_prefetch(&self) {
        self.state.lock().expect("cache lock").prefetch.clear();
    }

    /// Returns the entry for `(block, level)`, baking it on a miss. A miss also queues the
    /// block's face neighbors at the same level for prefetch. Concurrent requests for one key
    /// share a single bake.
    pub fn get_or_bake(
        &self,
        source: &dyn AssetSource,
        block: u32,
        level: usize,
    ) -> Result<Arc<BakedLevel>> {
        self.get(source, block, level, true)
    }

    fn get(
        &self,
        source: &dyn AssetSource,
        block: u32,
        level: usize,
        count: bool,
    ) -> Result<Arc<BakedLevel>> {
        if !source.contains(block, level) {
            return Err(Error::Lookup(format!(
                "no assets for block {block} level {level}"
            )));
        }
        let key = (block, level);
        let (slot, fresh) = {
            let mut st = self.state.lock().expect("cache lock");
            st.tick += 1;
            let tick = st.tick;
            st.prefetch.retain(|k| *k != key);
            match st.entries.get_mut(&key) {
                Some(e) => {
                    e.last_used = tick;
                    (e.slot.clone(), false)
                }
                None => {
                    let slot: Slot = Arc::new(OnceLock::new());
                    st.entries.insert(
                        key,
                        Entry {
                            slot: slot.clone(),
                            last_used: tick,
                        },
                    );
                    if count {
                        for n in source.neighbors(block) {
                            let nk = (n, level);
                            if source.contains(n, level)
                                && !st.entries.contains_key(&nk)
                                && !st.prefetch.contains(&nk)
                            {
                                st.prefetch.push_back(nk);
                            }
                        }
                    }
                    (slot, true)
                }
            }
        };
        if count {
            if fresh {
                self.misses.fetch_add(1, Ordering::Relaxed);
            } else {
                self.hits.fetch_add(1, Ordering::Relaxed);
            }
        }
        let result = slot.get_or_init(|| match source.bake(block, level) {
            Ok((baked, evals)) => {
                self.bakes.fetch_add(1, Ordering::Relaxed);
                self.evaluations.fetch_add(evals, Ordering::Relaxed);
                Ok(Arc::new(baked))
            }
            Err(e) => Err(e.to_string()),
        });
        match result {
            Ok(level_assets) => {
                let out = level_assets.clone();
                self.evict(key);
                Ok(out)
            }
            Err(msg) => {
                let mut st = self.state.lock().expect("cache lock");
                if st
                    .entries
                    .get(&key)
                    .is_some_and(|e| Arc::ptr_eq(&e.slot, &slot))
                {
                    st.entries.remove(&key);
                }
                Err(Error::State(format!(
                    "baking block {block} level {level} failed: {msg}"
                )))
            }
        }
    }

    /// Bakes up to `max` queued prefetch entries; returns how many were processed.
    pub fn run_prefetch(&self, source: &dyn AssetSource, max: usize) -> Result<usize> {
        let mut done = 0;
        while done < max {
            let Some((b, l)) = self.state.lock().expect("cache lock").prefetch.pop_front() else {
                break;
            };
            self.get(source, b, l, false)?;
            done += 1;
        }
        Ok(done)
    }

    fn evict(&self, keep: CacheKey) {
        let mut st = self.state.lock().expect("cache lock");
        loop {
            let mut total = 0;
            let mut oldest: Option<(u64, CacheKey)> = None;
            for (k, e) in &st.entries {
                if let Some(Ok(l)) = e.slot.get() {
                    total += pages_of(l);
                    if *k != keep && oldest.map_or(true, |(t, _)| e.last_used < t) {
                        oldest = Some((e.last_used, *k));
                    }
                }
            }
            match oldest {
                Some((_, k)) if total > self.capacity_pages => {
                    st.entries.remove(&k);
                    self.evictions.fetch_add(1, Ordering::Relaxed);
                }
                _ => break,
            }
        }
    }
}

/// Fetches an entry through `cache`.
pub fn cache_get_or_bake(
    cache: &AtlasCache,
    source: &dyn AssetSource,
    block: u32,
    level: usize,
) -> Result<Arc<BakedLevel>> {
    cache.get_or_bake(source, block, level)
}
