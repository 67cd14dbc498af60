//! Arrival processes: open-loop Poisson, closed-loop sequential streams and
//! trace replay.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::simcore::{RngStream, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArrivalSource {
    Poisson { rate: f64 },
    ClosedLoop { n: u64, concurrency: u32 },
    Trace { path: PathBuf },
}

/// Arrival times for open-loop sources. Closed-loop schedules carry only
/// the initial releases; later ones follow completions.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSchedule {
    pub times: Vec<SimTime>,
    pub source: ArrivalSource,
    pub warnings: Vec<String>,
}

impl ArrivalSchedule {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Pushes each time strictly past its predecessor (by one microsecond).
fn make_strict(times: &mut [SimTime]) {
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            times[i] = times[i - 1] + SimTime(1);
        }
    }
}

/// Poisson arrivals: exponential gaps with mean `1/rate`, stopping at the
/// first arrival that would land beyond `horizon`.
pub fn poisson_arrivals(rate: f64, horizon: f64, rng: &mut RngStream) -> Result<ArrivalSchedule> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(SimError::InvalidLoad(format!("rate must be positive, got {rate}")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SimError::InvalidLoad(format!("horizon must be positive, got {horizon}")));
    }
    let end = SimTime::from_secs(horizon);
    let mut times = Vec::with_capacity((rate * horizon * 1.1) as usize + 8);
    let mut t = 0.0;
    loop {
        t += rng.exponential(rate);
        let at = SimTime::from_secs(t);
        let at = match times.last() {
            Some(&prev) if at <= prev => prev + SimTime(1),
            _ => at,
        };
        if at > end {
            break;
        }
        times.push(at);
    }
    Ok(ArrivalSchedule {
        times,
        source: ArrivalSource::Poisson { rate },
        warnings: Vec::new(),
    })
}

/// Closed-loop load: `concurrency` streams release their first request at
/// t = 0 and each later one when the previous request of the same stream
/// completes.
pub fn closed_loop(n: u64, concurrency: u32) -> Result<ArrivalSchedule> {
    if n == 0 {
        return Err(SimError::InvalidLoad("closed loop needs n >= 1".into()));
    }
    if concurrency == 0 {
        return Err(SimError::InvalidLoad("closed loop needs concurrency >= 1".into()));
    }
    let first = n.min(u64::from(concurrency)) as usize;
    Ok(ArrivalSchedule {
        times: vec![SimTime::ZERO; first],
        source: ArrivalSource::ClosedLoop { n, concurrency },
        warnings: Vec::new(),
    })
}

/// Reads one non-negative, sorted arrival time (seconds) per line.
/// Blank lines are skipped; equal neighbours are nudged apart by 1 µs.
pub fn load_trace(path: &Path) -> Result<ArrivalSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_trace(&text, path)
}

pub fn parse_trace(text: &str, path: &Path) -> Result<ArrivalSchedule> {
    let err = |line: usize, reason: String| SimError::TraceParse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut times = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| err(i + 1, format!("not a number: {line:?}")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(err(i + 1, format!("arrival time must be non-negative, got {v}")));
        }
        if v < prev {
            return Err(err(i + 1, format!("arrival {v} precedes previous {prev}")));
        }
        prev = v;
        times.push(SimTime::from_secs(v));
    }
    make_strict(&mut times);
    let mut warnings = Vec::new();
    if times.is_empty() {
        warnings.push(format!("trace {} contains no arrivals", path.display()));
    }
    Ok(ArrivalSchedule {
        times,
        source: ArrivalSource::Trace {
            path: path.to_path_buf(),
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::rng_substream;

    #[test]
    fn poisson_count_within_three_sigma() {
        let mut rng = rng_substream(42, "arrivals");
        let s = poisson_arrivals(0.1, 1e4, &mut rng).unwrap();
        let sigma = 1000f64.sqrt();
        assert!((s.len() as f64 - 1000.0).abs() <= 3.0 * sigma, "{}", s.len());
        assert!(s.times.windows(2).all(|w| w[0] < w[1]));
        assert!(*s.times.last().unwrap() <= SimTime::from_secs(1e4));
    }

    #[test]
    fn poisson_gap_mean() {
        let mut rng = rng_substream(7, "arrivals");
        let s = poisson_arrivals(0.3, 3.4e6, &mut rng).unwrap();
        let mean = s.times.last().unwrap().as_secs() / s.len() as f64;
        assert!((mean - 1.0 / 0.3).abs() < 0.01 / 0.3, "{mean}");
    }

    #[test]
    fn poisson_deterministic() {
        let a = poisson_arrivals(1.0, 100.0, &mut rng_substream(1, "a")).unwrap();
        let b = poisson_arrivals(1.0, 100.0, &mut rng_substream(1, "a")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_rejects_bad_input() {
        let mut rng = rng_substream(1, "a");
        assert!(poisson_arrivals(0.0, 10.0, &mut rng).is_err());
        assert!(poisson_arrivals(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn closed_loop_initial_release() {
        assert_eq!(closed_loop(1, 1).unwrap().times, vec![SimTime::ZERO]);
        assert_eq!(closed_loop(5, 2).unwrap().len(), 2);
        assert_eq!(closed_loop(1, 4).unwrap().len(), 1);
        assert!(closed_loop(0, 1).is_err());
    }

    #[test]
    fn trace_parsing() {
        let p = Path::new("t.txt");
        let s = parse_trace("0\n1.5\n4\n", p).unwrap();
        let secs: Vec<f64> = s.times.iter().map(|t| t.as_secs()).collect();
        assert_eq!(secs, [0.0, 1.5, 4.0]);

        let empty = parse_trace("", p).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.warnings.len(), 1);

        match parse_trace("3\n1\n", p) {
            Err(SimError::TraceParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_trace("1\nx\n", p), Err(SimError::TraceParse { line: 2, .. })));
        assert!(matches!(parse_trace("-1\n", p), Err(SimError::TraceParse { line: 1, .. })));
    }

    #[test]
    fn trace_ties_nudged() {
        let s = parse_trace("2\n2\n2\n", Path::new("t")).unwrap();
        assert_eq!(s.times[1].as_micros(), s.times[0].as_micros() + 1);
        assert_eq!(s.times[2].as_micros(), s.times[0].as_micros() + 2);
    }
}
