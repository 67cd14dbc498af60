//! Object-keyed multi-modal cache with application hints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::simcore::SimTime;

/// Reuse hint attached to an object key, in the spirit of `madvise`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MmHint {
    #[default]
    None,
    WillNeed,
    DontNeed,
    Pinned,
}

impl MmHint {
    /// Eviction class; lower goes first. `None` for entries that never go.
    fn eviction_class(self) -> Option<u8> {
        match self {
            MmHint::DontNeed => Some(0),
            MmHint::None => Some(1),
            MmHint::WillNeed => Some(2),
            MmHint::Pinned => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmEntry {
    pub object_key: String,
    pub size: u64,
    pub hint: MmHint,
    pub inserted_at: SimTime,
    pub last_used_at: SimTime,
    lru_tick: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmCounters {
    pub lookups: u64,
    pub hit_objects: u64,
    pub total_objects: u64,
    pub evictions: u64,
    pub rejected: u64,
}

impl MmCounters {
    pub fn hit_rate_pct(&self) -> f64 {
        if self.total_objects == 0 {
            0.0
        } else {
            100.0 * self.hit_objects as f64 / self.total_objects as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MmAccess {
    pub hit: bool,
}

#[derive(Debug, Clone)]
pub struct MmCache {
    capacity_bytes: u64,
    used_bytes: u64,
    entries: BTreeMap<String, MmEntry>,
    hints: BTreeMap<String, MmHint>,
    tick: u64,
    counters: MmCounters,
}

impl MmCache {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            used_bytes: 0,
            entries: BTreeMap::new(),
            hints: BTreeMap::new(),
            tick: 0,
            counters: MmCounters::default(),
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn counters(&self) -> &MmCounters {
        &self.counters
    }

    pub fn entry(&self, key: &str) -> Option<&MmEntry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Bytes of `key` currently resident (0 when absent).
    pub fn resident_bytes(&self, key: &str) -> u64 {
        self.entries.get(key).map_or(0, |e| e.size)
    }

    fn next_tick(&mut self) -> u64 {
        let t = self.tick;
        self.tick += 1;
        t
    }

    /// Records a hint for `key`. Applies immediately if resident, and to
    /// every later insertion of the key.
    pub fn hint(&mut self, key: &str, hint: MmHint) {
        self.hints.insert(key.to_string(), hint);
        if let Some(e) = self.entries.get_mut(key) {
            e.hint = hint;
        }
    }

    fn victim(&self) -> Option<String> {
        self.entries
            .values()
            .filter_map(|e| e.hint.eviction_class().map(|c| ((c, e.lru_tick), e)))
            .min_by_key(|(k, _)| *k)
            .map(|(_, e)| e.object_key.clone())
    }

    fn remove(&mut self, key: &str) -> Option<MmEntry> {
        let e = self.entries.remove(key)?;
        self.used_bytes -= e.size;
        Some(e)
    }

    /// Accesses `key`. A hit requires the whole object to be resident. On a
    /// miss the object is inserted after evicting, in order, DONTNEED, NONE
    /// and WILLNEED entries (LRU within each class). PINNED entries stay.
    /// If pinned bytes leave no room, nothing is evicted and `CannotFit` is
    /// returned; the access still counts as a miss.
    pub fn access(&mut self, key: &str, size: u64, now: SimTime) -> Result<MmAccess> {
        self.counters.lookups += 1;
        self.counters.total_objects += 1;
        if let Some(e) = self.entries.get(key) {
            if e.size == size {
                let tick = self.next_tick();
                let e = self.entries.get_mut(key).unwrap();
                e.last_used_at = now;
                e.lru_tick = tick;
                self.counters.hit_objects += 1;
                return Ok(MmAccess { hit: true });
            }
        }
        // stale size: drop and re-insert
        self.remove(key);

        let pinned: u64 = self
            .entries
            .values()
            .filter(|e| e.hint == MmHint::Pinned)
            .map(|e| e.size)
            .sum();
        if size > self.capacity_bytes.saturating_sub(pinned) {
            self.counters.rejected += 1;
            return Err(SimError::CannotFit {
                key: key.to_string(),
                size,
                pinned,
                capacity: self.capacity_bytes,
            });
        }
        while self.used_bytes + size > self.capacity_bytes {
            let victim = self.victim().expect("feasibility checked above");
            self.remove(&victim);
            self.counters.evictions += 1;
        }
        let hint = self.hints.get(key).copied().unwrap_or_default();
        let tick = self.next_tick();
        self.entries.insert(
            key.to_string(),
            MmEntry {
                object_key: key.to_string(),
                size,
                hint,
                inserted_at: now,
                last_used_at: now,
                lru_tick: tick,
            },
        );
        self.used_bytes += size;
        Ok(MmAccess { hit: false })
    }
}
