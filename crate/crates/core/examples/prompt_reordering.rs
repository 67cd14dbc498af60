//! Static-to-dynamic prompt ordering on the evolutionary-search prompt:
//! consecutive prompts share a much longer prefix once the stable top
//! programs come before the per-iteration content.

use caisim::prompts::{evolve_template, ProgramDb, PromptMode};
use caisim::simcore::rng_substream;

fn shared_prefix(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn main() {
    let mut db = ProgramDb::new();
    for i in 0..20 {
        db.insert(format!("seed{i}"), 0.9, 256).unwrap();
    }
    let mut rng = rng_substream(1, "db_sample");
    let mut last: [Vec<u32>; 2] = Default::default();
    for it in 0..5 {
        db.insert(format!("gen{it}"), 0.5, 256).unwrap();
        let cur = db.latest().unwrap().clone();
        let sample = db.sample_excluding(4, 10, Some(cur.insertion_index), &mut rng).unwrap();
        let t = evolve_template(&sample, &cur, 32);
        let mut line = format!("iteration {it}:");
        for (slot, mode) in [PromptMode::Default, PromptMode::Optimized].into_iter().enumerate() {
            let tokens = t.render_tokens(mode).unwrap();
            let shared = shared_prefix(&last[slot], &tokens);
            line += &format!("  {} shares {shared:>4}/{}", mode.as_str(), tokens.len());
            last[slot] = tokens;
        }
        println!("{line}");
    }
}
