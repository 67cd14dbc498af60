//! Prefix KV cache: shared leading blocks hit, a one-token change at the
//! front misses everything, and a small cache evicts in LRU order.

use caisim::caches::PrefixKvCache;
use caisim::prompts::synthetic_tokens;
use caisim::SimTime;

fn main() {
    let system = synthetic_tokens("system", 0..256);
    let ask = |q: &str| {
        let mut p = system.clone();
        p.extend(synthetic_tokens(q, 0..40));
        p
    };

    let mut cache = PrefixKvCache::new(24, 16);
    for (i, q) in ["first", "second", "third"].iter().enumerate() {
        let now = SimTime::from_secs(i as f64);
        let prompt = ask(q);
        let m = cache.lookup(&prompt, now);
        println!("{q:>6}: {} of {} tokens reused", m.hit_tokens, prompt.len());
        cache.commit(&prompt, &m, now).unwrap();
    }

    let mut edited = ask("fourth");
    edited[0] ^= 1;
    let m = cache.lookup(&edited, SimTime::from_secs(3.0));
    println!("edited first token: {} tokens reused", m.hit_tokens);
    cache.commit(&edited, &m, SimTime::from_secs(3.0)).unwrap();

    let stats = cache.stats(SimTime::from_secs(4.0));
    println!(
        "hit rate {:.1}%, {} evictions, mean block lifetime {:.2}s",
        stats.hit_rate_pct, stats.evictions, stats.avg_block_lifetime_s
    );
}
