//! Multi-modal cache hints: DONTNEED goes first, WILLNEED last, PINNED never.

use caisim::caches::{MmCache, MmHint};
use caisim::SimTime;

const GB: u64 = 1_000_000_000;

fn main() {
    let mut cache = MmCache::new(12 * GB);
    cache.hint("intro", MmHint::Pinned);
    cache.hint("trailer", MmHint::DontNeed);
    cache.hint("lecture", MmHint::WillNeed);

    let plan = [("intro", 4), ("lecture", 4), ("trailer", 2), ("news", 2), ("sports", 4), ("lecture", 4), ("intro", 4)];
    for (t, (key, gb)) in plan.iter().enumerate() {
        let hit = cache.access(key, gb * GB, SimTime::from_secs(t as f64)).unwrap().hit;
        let resident: Vec<&str> = ["intro", "lecture", "trailer", "news", "sports"]
            .into_iter()
            .filter(|k| cache.contains(k))
            .collect();
        println!("{key:>8} {:>4}  resident: {resident:?}", if hit { "hit" } else { "miss" });
    }

    match cache.access("film", 10 * GB, SimTime::from_secs(9.0)) {
        Ok(_) => println!("film admitted"),
        Err(e) => println!("film rejected: {e}"),
    }
    println!("hit rate {:.1}%", cache.counters().hit_rate_pct());
}
