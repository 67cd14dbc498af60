//! Block-chained prefix KV cache.
//!
//! A prompt is split into full blocks of `block_size` tokens; each block is
//! identified by a 128-bit digest of its parent's digest and its own token
//! ids, so a block hash names the whole prefix up to and including it.
//! Lookups return the longest resident leading chain. A trailing partial
//! block never matches and is never stored.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::simcore::SimTime;

pub type ChainHash = u128;

pub const DEFAULT_BLOCK_SIZE: usize = 16;

/// Digests of every full block of `tokens`, in order.
pub fn chain_hashes(tokens: &[u32], block_size: usize) -> Vec<ChainHash> {
    assert!(block_size > 0, "block_size must be positive");
    let mut parent: ChainHash = 0;
    tokens
        .chunks_exact(block_size)
        .map(|block| {
            let mut h = Sha256::new();
            h.update(parent.to_le_bytes());
            for t in block {
                h.update(t.to_le_bytes());
            }
            let digest = h.finalize();
            let mut bytes = [0u8; 16];
            bytes.copy_from_slice(&digest[..16]);
            parent = u128::from_le_bytes(bytes);
            parent
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBlock {
    pub chain_hash: ChainHash,
    pub inserted_at: SimTime,
    pub last_used_at: SimTime,
    pub ref_count: u32,
    lru_tick: u64,
}

/// Result of a lookup. Holds references on the matched blocks until the
/// matching [`PrefixKvCache::commit`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrefixMatch {
    pub hit_blocks: usize,
    pub hit_tokens: usize,
    chain: Vec<ChainHash>,
}

/// Raw counters. Lifetimes are kept in integer microseconds so sums do not
/// depend on accumulation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvCounters {
    pub lookups: u64,
    pub hit_tokens: u64,
    pub total_tokens: u64,
    pub evictions: u64,
    pub lifetime_sum_us: u128,
    pub lifetime_samples: u64,
    pub admission_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KvStats {
    pub hit_rate_pct: f64,
    pub avg_block_lifetime_s: f64,
    /// False when no block has a lifetime yet; the average is then 0.
    pub lifetime_defined: bool,
    pub evictions: u64,
}

#[derive(Debug, Clone)]
pub struct PrefixKvCache {
    capacity_blocks: usize,
    block_size: usize,
    resident: HashMap<ChainHash, TokenBlock>,
    lru: BTreeMap<u64, ChainHash>,
    tick: u64,
    counters: KvCounters,
}

impl PrefixKvCache {
    pub fn new(capacity_blocks: usize, block_size: usize) -> Self {
        assert!(block_size > 0, "block_size must be positive");
        Self {
            capacity_blocks,
            block_size,
            resident: HashMap::new(),
            lru: BTreeMap::new(),
            tick: 0,
            counters: KvCounters::default(),
        }
    }

    pub fn capacity_blocks(&self) -> usize {
        self.capacity_blocks
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn resident_blocks(&self) -> usize {
        self.resident.len()
    }

    pub fn contains(&self, hash: ChainHash) -> bool {
        self.resident.contains_key(&hash)
    }

    pub fn block(&self, hash: ChainHash) -> Option<&TokenBlock> {
        self.resident.get(&hash)
    }

    pub fn counters(&self) -> &KvCounters {
        &self.counters
    }

    fn touch(&mut self, hash: ChainHash, now: SimTime) {
        let tick = self.tick;
        self.tick += 1;
        let block = self.resident.get_mut(&hash).expect("touch of absent block");
        self.lru.remove(&block.lru_tick);
        block.lru_tick = tick;
        block.last_used_at = now;
        self.lru.insert(tick, hash);
    }

    /// Longest resident chain of full leading blocks of `prompt`.
    pub fn lookup(&mut self, prompt: &[u32], now: SimTime) -> PrefixMatch {
        let hashes = chain_hashes(prompt, self.block_size);
        let matched: Vec<ChainHash> = hashes
            .iter()
            .take_while(|h| self.resident.contains_key(h))
            .copied()
            .collect();
        // deepest block gets the oldest tick so leaves go before their parents
        for &h in matched.iter().rev() {
            self.touch(h, now);
            self.resident.get_mut(&h).unwrap().ref_count += 1;
        }
        let hit_tokens = matched.len() * self.block_size;
        self.counters.lookups += 1;
        self.counters.total_tokens += prompt.len() as u64;
        self.counters.hit_tokens += hit_tokens as u64;
        PrefixMatch {
            hit_blocks: matched.len(),
            hit_tokens,
            chain: matched,
        }
    }

    fn evict_one(&mut self, now: SimTime) -> bool {
        let victim = self
            .lru
            .iter()
            .find(|(_, h)| self.resident[*h].ref_count == 0)
            .map(|(&tick, &h)| (tick, h));
        let Some((tick, hash)) = victim else {
            return false;
        };
        self.lru.remove(&tick);
        let block = self.resident.remove(&hash).unwrap();
        self.record_lifetime(now.saturating_sub(block.inserted_at));
        self.counters.evictions += 1;
        true
    }

    fn record_lifetime(&mut self, life: SimTime) {
        self.counters.lifetime_sum_us += u128::from(life.as_micros());
        self.counters.lifetime_samples += 1;
    }

    /// Makes every full block of `prompt` resident and releases the
    /// references taken by `matched`. Evicts unreferenced blocks in LRU
    /// order as needed. If every resident block is referenced, insertion
    /// stops, the failure is counted and an error is returned; the cache
    /// stays consistent either way.
    pub fn commit(&mut self, prompt: &[u32], matched: &PrefixMatch, now: SimTime) -> Result<()> {
        for h in &matched.chain {
            if let Some(b) = self.resident.get_mut(h) {
                b.ref_count = b.ref_count.saturating_sub(1);
            }
        }
        let hashes = chain_hashes(prompt, self.block_size);
        let mut pinned: Vec<ChainHash> = Vec::with_capacity(hashes.len());
        let mut admitted = true;
        for &h in &hashes {
            if let Some(b) = self.resident.get_mut(&h) {
                b.ref_count += 1;
                pinned.push(h);
                continue;
            }
            if self.resident.len() >= self.capacity_blocks && !self.evict_one(now) {
                admitted = false;
                break;
            }
            let tick = self.tick;
            self.tick += 1;
            self.resident.insert(
                h,
                TokenBlock {
                    chain_hash: h,
                    inserted_at: now,
                    last_used_at: now,
                    ref_count: 1,
                    lru_tick: tick,
                },
            );
            self.lru.insert(tick, h);
            pinned.push(h);
        }
        for &h in pinned.iter().rev() {
            self.touch(h, now);
            let b = self.resident.get_mut(&h).unwrap();
            b.ref_count -= 1;
        }
        if admitted {
            Ok(())
        } else {
            self.counters.admission_failures += 1;
            Err(SimError::KvAdmission {
                capacity: self.capacity_blocks,
            })
        }
    }

    /// Lifetime sum (µs) and sample count, with resident blocks closed at
    /// `sim_end`.
    pub fn lifetime_totals(&self, sim_end: SimTime) -> (u128, u64) {
        let mut sum = self.counters.lifetime_sum_us;
        let mut n = self.counters.lifetime_samples;
        for b in self.resident.values() {
            sum += u128::from(sim_end.saturating_sub(b.inserted_at).as_micros());
            n += 1;
        }
        (sum, n)
    }

    /// Cumulative statistics. Blocks still resident contribute
    /// `sim_end - inserted_at` to the average lifetime.
    pub fn stats(&self, sim_end: SimTime) -> KvStats {
        let c = &self.counters;
        let hit_rate_pct = if c.total_tokens == 0 {
            0.0
        } else {
            100.0 * c.hit_tokens as f64 / c.total_tokens as f64
        };
        let (sum, n) = self.lifetime_totals(sim_end);
        let (avg, defined) = if n == 0 {
            (0.0, false)
        } else {
            ((sum as f64 / n as f64) / 1e6, true)
        };
        KvStats {
            hit_rate_pct,
            avg_block_lifetime_s: avg,
            lifetime_defined: defined,
            evictions: c.evictions,
        }
    }
}
