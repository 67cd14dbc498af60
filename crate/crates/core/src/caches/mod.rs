//! Prefix KV cache and multi-modal object cache.

pub mod kv;
pub mod mm;

pub use kv::{chain_hashes, ChainHash, DEFAULT_BLOCK_SIZE, KvCounters, KvStats, PrefixKvCache, PrefixMatch, TokenBlock};
pub use mm::{MmAccess, MmCache, MmCounters, MmEntry, MmHint};
