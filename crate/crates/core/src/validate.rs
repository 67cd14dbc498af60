//! Built-in acceptance suite run by `caisim validate`.
//!
//! Every check runs against the scenario files shipped with the crate, so
//! editing a calibration constant there is enough to make a check fail.

use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::caches::PrefixKvCache;
use crate::cli::{compare, sweep, SweepAxis, TAG_MIN_COST, TAG_MIN_ENERGY, TAG_MIN_LATENCY, TAG_MIN_POWER};
use crate::engine::run_scenario;
use crate::error::Result;
use crate::loadgen::poisson_arrivals;
use crate::metrics::{dominance, energy_wh, percentile, MetricsReport, TimelineSample};
use crate::scenario::Scenario;
use crate::simcore::{rng_substream, SimTime};

pub fn default_scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {} [{verdict}] {}: {}", self.id, self.name, self.detail)
    }
}

/// Collects named sub-checks of one criterion.
struct Checks {
    pass: bool,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self {
            pass: true,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, note: String) {
        self.pass &= ok;
        self.notes.push(if ok { note } else { format!("NOT {note}") });
    }

    fn finish(self, id: u8, name: &'static str) -> CriterionResult {
        CriterionResult {
            id,
            name,
            pass: self.pass,
            detail: self.notes.join("; "),
        }
    }
}

fn finish(id: u8, name: &'static str, r: Result<Checks>) -> CriterionResult {
    match r {
        Ok(c) => c.finish(id, name),
        Err(e) => CriterionResult {
            id,
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn load(dir: &Path, name: &str) -> Result<Scenario> {
    Scenario::load(&dir.join(format!("{name}.json")))
}

fn run(dir: &Path, name: &str) -> Result<MetricsReport> {
    Ok(run_scenario(&load(dir, name)?)?.0)
}

fn run_with(dir: &Path, name: &str, overrides: &[(&str, Value)]) -> Result<MetricsReport> {
    let mut s = load(dir, name)?;
    for (path, v) in overrides {
        s = s.with_override(path, v.clone())?;
    }
    Ok(run_scenario(&s)?.0)
}

fn p99(r: &MetricsReport) -> f64 {
    r.latency_s.map_or(f64::NAN, |l| l.p99)
}

pub const TABLE1_SCENARIOS: [&str; 7] = [
    "table1_l40s_tp2",
    "table1_a100_tp1",
    "table1_a100_tp2",
    "table1_h100_tp1",
    "table1_h100_tp2",
    "table1_h200_tp1",
    "table1_h200_tp2",
];

/// Accelerator total cost, and the minimum tags of the comparison.
pub fn criterion_1(dir: &Path) -> CriterionResult {
    let r = (|| {
        let reports: Vec<MetricsReport> = TABLE1_SCENARIOS.iter().map(|n| run(dir, n)).collect::<Result<_>>()?;
        let by = |n: &str| &reports[TABLE1_SCENARIOS.iter().position(|x| *x == n).unwrap()];
        let mut c = Checks::new();
        for (name, target) in [
            ("table1_a100_tp1", 0.33),
            ("table1_h200_tp2", 1.59),
            ("table1_l40s_tp2", 0.53),
            ("table1_h100_tp2", 1.35),
        ] {
            let got = by(name).cost_usd;
            c.check(
                (got - target).abs() <= 0.01 + 1e-9,
                format!("{name} cost ${got:.3} within $0.01 of ${target:.2}"),
            );
        }
        let rows = compare(&reports);
        for (tag, want) in [
            (TAG_MIN_COST, "table1_a100_tp1"),
            (TAG_MIN_ENERGY, "table1_h200_tp1"),
            (TAG_MIN_LATENCY, "table1_h200_tp2"),
            (TAG_MIN_POWER, "table1_l40s_tp2"),
        ] {
            let tagged: Vec<&str> = rows.iter().filter(|r| r.tags.contains(&tag)).map(|r| r.name.as_str()).collect();
            c.check(tagged == [want], format!("{tag} -> {tagged:?}"));
        }
        Ok(c)
    })();
    finish(1, "Accelerator cost arithmetic", r)
}

/// TP1 vs TP2 energy and latency trade-off and the L40S latency gap.
pub fn criterion_2(dir: &Path) -> CriterionResult {
    let r = (|| {
        let tp1 = run(dir, "table1_h200_tp1")?;
        let tp2 = run(dir, "table1_h200_tp2")?;
        let l40s = run(dir, "table1_l40s_tp2")?;
        let mut c = Checks::new();
        let saving = 100.0 * (1.0 - tp1.energy_wh / tp2.energy_wh);
        c.check((saving - 30.5).abs() <= 2.0, format!("H200 TP1 energy saving {saving:.1}% (30.5 +/- 2)"));
        let slower = 100.0 * (tp1.e2e_makespan_s / tp2.e2e_makespan_s - 1.0);
        c.check((slower - 15.6).abs() <= 2.0, format!("H200 TP1 slower by {slower:.1}% (15.6 +/- 2)"));
        let min = TABLE1_SCENARIOS
            .iter()
            .map(|n| run(dir, n).map(|r| r.e2e_makespan_s))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let above = 100.0 * (l40s.e2e_makespan_s / min - 1.0);
        c.check((above - 58.4).abs() <= 2.0, format!("L40S TP2 latency {above:.1}% above minimum (58.4 +/- 2)"));
        Ok(c)
    })();
    finish(2, "Energy trade-off ratios", r)
}

/// Hit-rate plateau of the optimized evolutionary-search prompt stream.
pub fn criterion_3(dir: &Path) -> CriterionResult {
    let r = (|| {
        let opt = run_with(dir, "openevolve_plateau", &[("prompt_mode", json!("OPTIMIZED"))])?;
        let def = run_with(dir, "openevolve_plateau", &[("prompt_mode", json!("DEFAULT"))])?;
        let mut c = Checks::new();
        let h = opt.kv_hit_rate_pct;
        c.check((h - 28.6).abs() <= 2.0, format!("optimized hit rate {h:.2}% (28.6 +/- 2)"));
        let d = def.kv_hit_rate_pct;
        c.check(d < 5.0, format!("default hit rate {d:.2}% (< 5)"));
        Ok(c)
    })();
    finish(3, "Prefix-cache plateau", r)
}

/// Optimized vs default prompt ordering under a capacity-bound cache.
pub fn criterion_4(dir: &Path) -> CriterionResult {
    let r = (|| {
        let opt = run_with(dir, "table2_prompt", &[("prompt_mode", json!("OPTIMIZED"))])?;
        let def = run_with(dir, "table2_prompt", &[("prompt_mode", json!("DEFAULT"))])?;
        let mut c = Checks::new();
        let gain = opt.kv_hit_rate_pct - def.kv_hit_rate_pct;
        c.check(gain >= 15.0, format!("hit-rate gain {gain:.1} pp (>= 15)"));
        let lat = 100.0 * (1.0 - opt.e2e_makespan_s / def.e2e_makespan_s);
        c.check(lat >= 5.0, format!("latency reduction {lat:.1}% (>= 5)"));
        let en = 100.0 * (1.0 - opt.energy_wh / def.energy_wh);
        c.check(en >= 8.0, format!("energy reduction {en:.1}% (>= 8)"));
        c.check(
            opt.avg_block_lifetime_s > def.avg_block_lifetime_s,
            format!(
                "block lifetime {:.1}s > {:.1}s",
                opt.avg_block_lifetime_s, def.avg_block_lifetime_s
            ),
        );
        Ok(c)
    })();
    finish(4, "Prompt-optimization deltas", r)
}

/// Sticky vs random routing on the multi-modal cache.
pub fn criterion_5(dir: &Path) -> CriterionResult {
    let r = (|| {
        let sticky = run_with(dir, "fig9_routing", &[("routing.kind", json!("STICKY"))])?;
        let random = run_with(dir, "fig9_routing", &[("routing.kind", json!("RANDOM"))])?;
        let mut c = Checks::new();
        let s = sticky.mm_hit_rate_pct;
        c.check((s - 200.0 / 3.0).abs() < 1e-9, format!("sticky MM hit {s:.2}% (66.7)"));
        let h = random.mm_hit_rate_pct;
        c.check(h < 25.0, format!("random MM hit {h:.2}% (< 25)"));
        let (ls, lr) = (sticky.latency_s.unwrap(), random.latency_s.unwrap());
        for (name, a, b) in [("p25", lr.p25, ls.p25), ("p50", lr.p50, ls.p50), ("p95", lr.p95, ls.p95)] {
            c.check(
                a > b,
                format!("random {name} {a:.2}s > sticky {b:.2}s (+{:.1}%)", 100.0 * (a / b - 1.0)),
            );
        }
        Ok(c)
    })();
    finish(5, "Sticky routing", r)
}

const LLM_FREQ: &str = "devices.mm_gpu.freq_mhz";
const STT_FREQ: &str = "devices.stt_gpu.freq_mhz";

/// Frequency sensitivity of tail latency and energy.
pub fn criterion_6(dir: &Path) -> CriterionResult {
    let r = (|| {
        let base = load(dir, "fig5_heatmap")?;
        let at = |rate: f64, llm: f64, stt: f64| -> Result<MetricsReport> {
            let s = base
                .with_override("load.rate", json!(rate))?
                .with_override(LLM_FREQ, json!(llm))?
                .with_override(STT_FREQ, json!(stt))?;
            Ok(run_scenario(&s)?.0)
        };
        let mut c = Checks::new();

        let ratio = p99(&at(0.1, 1125.0, 1410.0)?) / p99(&at(0.1, 300.0, 1410.0)?);
        c.check(ratio <= 0.55, format!("0.1 QPS p99(1125)/p99(300) = {ratio:.3} (<= 0.55)"));

        let grid = sweep(
            &base.with_override("load.rate", json!(0.4))?,
            &[
                SweepAxis::parse(LLM_FREQ, "300,570,855,1125"),
                SweepAxis::parse(STT_FREQ, "300,570,855,1410"),
            ],
            4,
        )?;
        let min = grid.iter().map(|g| p99(&g.report)).fold(f64::INFINITY, f64::min);
        let low = grid
            .iter()
            .filter(|g| g.values[0] == json!(300))
            .map(|g| p99(&g.report))
            .fold(f64::INFINITY, f64::min);
        c.check(low >= 10.0 * min, format!("0.4 QPS p99 at 300 MHz = {:.1}x grid minimum (>= 10)", low / min));

        let capped = at(0.1, 1125.0, 300.0)?.energy_wh;
        let max = at(0.1, 1410.0, 1410.0)?.energy_wh;
        c.check(
            capped <= 0.75 * max,
            format!("energy (1125, 300) = {:.3}x (max, max) (<= 0.75)", capped / max),
        );

        let stt_effect = |llm: f64| -> Result<f64> {
            let slow = p99(&at(0.2, llm, 300.0)?);
            let fast = p99(&at(0.2, llm, 1410.0)?);
            Ok(100.0 * (1.0 - fast / slow))
        };
        let hi = stt_effect(1410.0)?;
        c.check(hi.abs() < 2.0, format!("0.2 QPS STT effect with LLM at max {hi:.1}% (< 2)"));
        let lo = stt_effect(300.0)?;
        c.check(lo > 15.0, format!("0.2 QPS STT effect with LLM at 300 MHz {lo:.1}% (> 15)"));
        Ok(c)
    })();
    finish(6, "Frequency sensitivity", r)
}

/// CPU/GPU dominance per workload.
pub fn criterion_7(dir: &Path) -> CriterionResult {
    let r = (|| {
        let mut c = Checks::new();
        let rag = run(dir, "fig2_dominance_rag")?.dominance.cpu_frac;
        c.check((rag - 0.92).abs() <= 0.05, format!("RAG cpu_frac {rag:.3} (0.92 +/- 0.05)"));
        let vqa = run(dir, "fig2_dominance_video_qa")?.dominance.gpu_frac;
        c.check((vqa - 0.62).abs() <= 0.05, format!("Video-QA gpu_frac {vqa:.3} (0.62 +/- 0.05)"));
        let oe = run(dir, "fig2_dominance_openevolve")?.dominance.gpu_frac;
        c.check((oe - 0.82).abs() <= 0.05, format!("OpenEvolve gpu_frac {oe:.3} (0.82 +/- 0.05)"));
        Ok(c)
    })();
    finish(7, "Resource dominance", r)
}

/// Seeded spot checks of the property suite; the test suite runs the
/// full randomized versions.
pub fn criterion_8(dir: &Path) -> CriterionResult {
    let r = (|| {
        let mut c = Checks::new();

        let s = load(dir, "rag_closed_loop")?;
        let a = run_scenario(&s)?.0.to_json();
        let b = run_scenario(&s)?.0.to_json();
        c.check(a == b, "(a) identical reports across runs".into());
        let axes = [SweepAxis::parse("workload.params.k", "5,10,15,20")];
        let serial: Vec<String> = sweep(&s, &axes, 1)?.iter().map(|x| x.report.to_json()).collect();
        let parallel: Vec<String> = sweep(&s, &axes, 4)?.iter().map(|x| x.report.to_json()).collect();
        c.check(serial == parallel, "(a) serial and parallel sweeps identical".into());

        let mut rng = rng_substream(8, "arrivals");
        let sched = poisson_arrivals(0.3, 1e6 / 0.3 * 1.001, &mut rng)?;
        let n = sched.len().min(1_000_000);
        let mean = sched.times[n - 1].as_secs() / n as f64;
        c.check(
            (mean * 0.3 - 1.0).abs() < 0.01,
            format!("(b) Poisson gap mean {mean:.4}s over {n} gaps (3.333 +/- 1%)"),
        );

        let mut rng = rng_substream(8, "lists");
        let mut ok = true;
        for _ in 0..1000 {
            let len = 1 + rng.below(50);
            let v: Vec<f64> = (0..len).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
            let p = rng.uniform_range(0.01, 100.0);
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let mut rank = 1;
            while (rank as f64) < p / 100.0 * len as f64 - 1e-9 {
                rank += 1;
            }
            ok &= percentile(&v, p)? == sorted[rank - 1];
        }
        c.check(ok, "(c) percentile matches sort oracle on 1000 lists".into());

        let mut ok = true;
        for _ in 0..100 {
            let mut t = 0.0;
            let mut bp = Vec::new();
            let mut closed = 0.0;
            for _ in 0..1 + rng.below(20) {
                let w = rng.uniform_range(0.0, 500.0);
                let dt = rng.uniform_range(0.0, 100.0);
                bp.push((t, w));
                closed += w * dt;
                t += dt;
            }
            bp.push((t, 0.0));
            ok &= (energy_wh(&bp)? - closed / 3600.0).abs() <= 1e-9 * (1.0 + closed);
        }
        c.check(ok, "(d) energy integration matches closed form on 100 traces".into());

        let mut cache = PrefixKvCache::new(1024, 16);
        let prompt: Vec<u32> = (0..256).collect();
        let m = cache.lookup(&prompt, SimTime::ZERO);
        cache.commit(&prompt, &m, SimTime::ZERO)?;
        let mut perturbed = prompt.clone();
        perturbed[0] = 9999;
        let hit = cache.lookup(&perturbed, SimTime::ZERO).hit_tokens;
        c.check(hit == 0, format!("(e) position-0 perturbation hits {hit} tokens"));

        let ks = sweep(
            &load(dir, "rag_k_sweep")?,
            &[SweepAxis::parse("workload.params.k", "5,10,15,20,25,30")],
            4,
        )?;
        let p90: Vec<f64> = ks.iter().map(|x| x.report.latency_s.map_or(f64::NAN, |l| l.p90)).collect();
        c.check(
            p90.windows(2).all(|w| w[0] <= w[1]),
            format!("(f) RAG p90 over k=5..30 non-decreasing: {p90:.2?}"),
        );

        let mut ok = true;
        for _ in 0..100 {
            let tl: Vec<TimelineSample> = (0..1 + rng.below(200))
                .map(|i| TimelineSample {
                    t: i as f64,
                    cpu_util: rng.uniform_range(0.0, 100.0),
                    gpu_util: (0..1 + rng.below(3)).map(|_| 100.0 * rng.below(2) as f64).collect(),
                    gpu_power: Vec::new(),
                    dram_used: 0,
                })
                .collect();
            let d = dominance(&tl)?;
            ok &= d.cpu_frac + d.gpu_frac == 1.0;
        }
        c.check(ok, "(g) dominance fractions sum to 1 on 100 timelines".into());
        Ok(c)
    })();
    finish(8, "Property suite", r)
}

pub fn run_all(dir: &Path) -> Vec<CriterionResult> {
    vec![
        criterion_1(dir),
        criterion_2(dir),
        criterion_3(dir),
        criterion_4(dir),
        criterion_5(dir),
        criterion_6(dir),
        criterion_7(dir),
        criterion_8(dir),
    ]
}
