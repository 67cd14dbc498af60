//! CPU pools, GPU devices with DVFS tables, service-time scaling and power.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::caches::{MmCache, PrefixKvCache};
use crate::error::{Result, SimError};
use crate::simcore::SimTime;

/// One row of a device frequency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqPoint {
    pub mhz: f64,
    /// Relative speed; 1.0 at the table's maximum frequency.
    pub perf_scale: f64,
    pub active_w: f64,
    pub idle_w: f64,
}

fn default_one_u32() -> u32 {
    1
}

fn default_one_f64() -> f64 {
    1.0
}

/// Accelerator profile as stored in `profiles/*.json`.
///
/// `tp` is the number of physical GPUs the profile stands for; power and
/// price are totals across them. `throughput` scales speed relative to the
/// reference accelerator the scenario's service models were measured on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorProfile {
    pub name: String,
    pub memory_gb: f64,
    pub price_per_hour: f64,
    pub slots: u32,
    pub freq_table: Vec<FreqPoint>,
    #[serde(default = "default_one_u32")]
    pub tp: u32,
    #[serde(default = "default_one_f64")]
    pub throughput: f64,
}

impl AcceleratorProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| SimError::InvalidProfile {
            name: self.name.clone(),
            reason,
        };
        if self.freq_table.is_empty() {
            return Err(bad("empty freq_table".into()));
        }
        if self.slots == 0 {
            return Err(bad("slots must be at least 1".into()));
        }
        if self.tp == 0 {
            return Err(bad("tp must be at least 1".into()));
        }
        if !(self.throughput > 0.0) || !self.throughput.is_finite() {
            return Err(bad("throughput must be positive".into()));
        }
        if !(self.price_per_hour >= 0.0) {
            return Err(bad("price_per_hour must be non-negative".into()));
        }
        for (i, p) in self.freq_table.iter().enumerate() {
            if !(p.perf_scale > 0.0) || !p.perf_scale.is_finite() {
                return Err(bad(format!("freq_table[{i}].perf_scale must be positive")));
            }
            if !(p.idle_w >= 0.0) || p.active_w < p.idle_w {
                return Err(bad(format!("freq_table[{i}]: need active_w >= idle_w >= 0")));
            }
            if i > 0 {
                let prev = &self.freq_table[i - 1];
                if p.mhz <= prev.mhz {
                    return Err(bad(format!("freq_table[{i}].mhz not strictly increasing")));
                }
                if p.perf_scale <= prev.perf_scale {
                    return Err(bad(format!(
                        "freq_table[{i}].perf_scale not strictly increasing"
                    )));
                }
            }
        }
        let top = self.freq_table.last().unwrap().perf_scale;
        if (top - 1.0).abs() > 1e-9 {
            return Err(bad(format!("perf_scale at max frequency is {top}, expected 1.0")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let profile: AcceleratorProfile = serde_json::from_str(&text).map_err(|e| {
            SimError::config(path.display().to_string(), e.to_string())
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn min_mhz(&self) -> f64 {
        self.freq_table[0].mhz
    }

    pub fn max_mhz(&self) -> f64 {
        self.freq_table[self.freq_table.len() - 1].mhz
    }

    /// Linearly interpolated operating point at `mhz`.
    pub fn point_at(&self, mhz: f64) -> Option<FreqPoint> {
        let table = &self.freq_table;
        if !(mhz >= self.min_mhz() && mhz <= self.max_mhz()) {
            return None;
        }
        let hi = table.partition_point(|p| p.mhz < mhz);
        if table[hi].mhz == mhz {
            return Some(table[hi]);
        }
        let (a, b) = (&table[hi - 1], &table[hi]);
        let w = (mhz - a.mhz) / (b.mhz - a.mhz);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        Some(FreqPoint {
            mhz,
            perf_scale: lerp(a.perf_scale, b.perf_scale),
            active_w: lerp(a.active_w, b.active_w),
            idle_w: lerp(a.idle_w, b.idle_w),
        })
    }
}

/// Anything that can serve a stage: it only needs to report its speed.
pub trait Server {
    /// Speed multiplier applied to the frequency-scaled part of a stage.
    fn speed(&self) -> f64;
}

/// Piecewise-constant signal recorded as `(time, value)` breakpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    points: Vec<(SimTime, f64)>,
}

impl StepTrace {
    pub fn new(initial: f64) -> Self {
        Self {
            points: vec![(SimTime::ZERO, initial)],
        }
    }

    /// Records `value` from `t` onward. Same-time updates overwrite.
    pub fn set(&mut self, t: SimTime, value: f64) {
        match self.points.last_mut() {
            Some(last) if last.0 == t => last.1 = value,
            Some(last) if last.1 == value => {}
            _ => self.points.push((t, value)),
        }
        debug_assert!(self.points.windows(2).all(|w| w[0].0 < w[1].0));
    }

    /// Value in effect at `t` (after all updates at `t`).
    pub fn at(&self, t: SimTime) -> f64 {
        let idx = self.points.partition_point(|p| p.0 <= t);
        if idx == 0 {
            self.points.first().map_or(0.0, |p| p.1)
        } else {
            self.points[idx - 1].1
        }
    }

    pub fn points(&self) -> &[(SimTime, f64)] {
        &self.points
    }

    /// Breakpoints truncated to `[0, end]`, in seconds.
    pub fn breakpoints_secs(&self, end: SimTime) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .points
            .iter()
            .take_while(|p| p.0 <= end)
            .map(|p| (p.0.as_secs(), p.1))
            .collect();
        if out.last().is_none_or(|p| p.0 < end.as_secs()) {
            out.push((end.as_secs(), self.at(end)));
        }
        out
    }
}

/// Host CPU cores and DRAM.
#[derive(Debug, Clone)]
pub struct CpuPool {
    pub cores: u32,
    busy_cores: u32,
    pub dram_capacity: u64,
    dram_used: u64,
    util_trace: StepTrace,
    dram_trace: StepTrace,
}

impl CpuPool {
    pub fn new(cores: u32, dram_capacity: u64) -> Self {
        Self {
            cores,
            busy_cores: 0,
            dram_capacity,
            dram_used: 0,
            util_trace: StepTrace::new(0.0),
            dram_trace: StepTrace::new(0.0),
        }
    }

    pub fn busy_cores(&self) -> u32 {
        self.busy_cores
    }

    pub fn free_cores(&self) -> u32 {
        self.cores - self.busy_cores
    }

    pub fn dram_used(&self) -> u64 {
        self.dram_used
    }

    pub fn utilization_pct(&self) -> f64 {
        if self.cores == 0 {
            0.0
        } else {
            100.0 * f64::from(self.busy_cores) / f64::from(self.cores)
        }
    }

    pub fn acquire(&mut self, now: SimTime, cores: u32) {
        assert!(cores <= self.free_cores(), "cpu pool over-subscribed");
        self.busy_cores += cores;
        self.util_trace.set(now, self.utilization_pct());
    }

    pub fn release(&mut self, now: SimTime, cores: u32) {
        assert!(cores <= self.busy_cores, "cpu pool released more than acquired");
        self.busy_cores -= cores;
        self.util_trace.set(now, self.utilization_pct());
    }

    /// Reserves DRAM. Returns false (and reserves only up to capacity) when
    /// the request does not fit.
    pub fn reserve_dram(&mut self, now: SimTime, bytes: u64) -> bool {
        let fits = self.dram_used + bytes <= self.dram_capacity;
        self.dram_used = (self.dram_used + bytes).min(self.dram_capacity);
        self.dram_trace.set(now, self.dram_used as f64);
        fits
    }

    pub fn release_dram(&mut self, now: SimTime, bytes: u64) {
        self.dram_used = self.dram_used.saturating_sub(bytes);
        self.dram_trace.set(now, self.dram_used as f64);
    }

    pub fn util_trace(&self) -> &StepTrace {
        &self.util_trace
    }

    pub fn dram_trace(&self) -> &StepTrace {
        &self.dram_trace
    }
}

impl Server for CpuPool {
    fn speed(&self) -> f64 {
        1.0
    }
}

/// A GPU (or a tensor-parallel group of GPUs) with its caches and traces.
#[derive(Debug, Clone)]
pub struct GpuDevice {
    pub id: String,
    pub group: String,
    pub profile: AcceleratorProfile,
    current: FreqPoint,
    active: u32,
    pub kv_cache: PrefixKvCache,
    pub mm_cache: MmCache,
    power_trace: StepTrace,
    busy_trace: StepTrace,
}

impl GpuDevice {
    pub fn new(
        id: impl Into<String>,
        group: impl Into<String>,
        profile: AcceleratorProfile,
        mhz: f64,
        kv_cache: PrefixKvCache,
        mm_cache: MmCache,
    ) -> Result<Self> {
        profile.validate()?;
        let id = id.into();
        let current = profile
            .point_at(mhz)
            .ok_or_else(|| SimError::FrequencyOutOfRange {
                device: id.clone(),
                mhz,
                min: profile.min_mhz(),
                max: profile.max_mhz(),
            })?;
        Ok(Self {
            id,
            group: group.into(),
            power_trace: StepTrace::new(current.idle_w),
            busy_trace: StepTrace::new(0.0),
            profile,
            current,
            active: 0,
            kv_cache,
            mm_cache,
        })
    }

    pub fn slots(&self) -> u32 {
        self.profile.slots
    }

    pub fn active(&self) -> u32 {
        self.active
    }

    pub fn has_free_slot(&self) -> bool {
        self.active < self.profile.slots
    }

    pub fn current_freq(&self) -> f64 {
        self.current.mhz
    }

    pub fn operating_point(&self) -> FreqPoint {
        self.current
    }

    pub fn price_per_hour(&self) -> f64 {
        self.profile.price_per_hour
    }

    /// Changes the SM frequency. Only allowed while no request is in service.
    pub fn set_frequency(&mut self, now: SimTime, mhz: f64) -> Result<()> {
        let point = self
            .profile
            .point_at(mhz)
            .ok_or_else(|| SimError::FrequencyOutOfRange {
                device: self.id.clone(),
                mhz,
                min: self.profile.min_mhz(),
                max: self.profile.max_mhz(),
            })?;
        if self.active > 0 {
            return Err(SimError::FrequencyChangeMidService {
                device: self.id.clone(),
                active: self.active,
            });
        }
        self.current = point;
        self.power_trace.set(now, self.power_now());
        Ok(())
    }

    /// Power draw right now: active power while any request is in service.
    pub fn power_now(&self) -> f64 {
        if self.active > 0 {
            self.current.active_w
        } else {
            self.current.idle_w
        }
    }

    /// Power draw at time `t`, from the recorded trace.
    pub fn instantaneous_power(&self, t: SimTime) -> f64 {
        self.power_trace.at(t)
    }

    pub fn begin_service(&mut self, now: SimTime) {
        assert!(self.has_free_slot(), "device {} has no free slot", self.id);
        self.active += 1;
        self.power_trace.set(now, self.power_now());
        self.busy_trace.set(now, f64::from(self.active));
    }

    pub fn end_service(&mut self, now: SimTime) {
        assert!(self.active > 0, "device {} ended an absent service", self.id);
        self.active -= 1;
        self.power_trace.set(now, self.power_now());
        self.busy_trace.set(now, f64::from(self.active));
    }

    pub fn power_trace(&self) -> &StepTrace {
        &self.power_trace
    }

    /// Number of requests in service over time.
    pub fn busy_trace(&self) -> &StepTrace {
        &self.busy_trace
    }
}

impl Server for GpuDevice {
    fn speed(&self) -> f64 {
        self.current.perf_scale * self.profile.throughput
    }
}

/// Service-time model of a stage: a frequency-independent part plus a part
/// that scales inversely with device speed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageServiceModel {
    pub fixed_time: f64,
    pub compute_time: f64,
    pub per_token_prefill: f64,
    pub per_token_decode: f64,
    pub per_frame_encode: f64,
}

impl StageServiceModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("fixed_time", self.fixed_time),
            ("compute_time", self.compute_time),
            ("per_token_prefill", self.per_token_prefill),
            ("per_token_decode", self.per_token_decode),
            ("per_frame_encode", self.per_frame_encode),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::InvalidServiceModel(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-request work handed to a service model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkVector {
    pub uncached_prefill_tokens: u64,
    pub decode_tokens: u64,
    pub uncached_frames: u64,
    /// Seconds of additional frequency-scaled work at speed 1.
    pub unit_work: f64,
}

/// Duration in seconds of `work` under `model` on a server running at `speed`.
pub fn service_time_at(model: &StageServiceModel, speed: f64, work: &WorkVector) -> f64 {
    let scaled = model.compute_time
        + model.per_token_prefill * work.uncached_prefill_tokens as f64
        + model.per_token_decode * work.decode_tokens as f64
        + model.per_frame_encode * work.uncached_frames as f64
        + work.unit_work;
    model.fixed_time + scaled / speed
}

pub fn service_time(model: &StageServiceModel, server: &dyn Server, work: &WorkVector) -> f64 {
    service_time_at(model, server.speed(), work)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn a100_like() -> AcceleratorProfile {
        AcceleratorProfile {
            name: "test-a100".into(),
            memory_gb: 80.0,
            price_per_hour: 0.52,
            slots: 1,
            freq_table: vec![
                FreqPoint { mhz: 300.0, perf_scale: 0.5, active_w: 117.0, idle_w: 60.0 },
                FreqPoint { mhz: 1125.0, perf_scale: 0.9, active_w: 304.0, idle_w: 60.0 },
                FreqPoint { mhz: 1410.0, perf_scale: 1.0, active_w: 400.0, idle_w: 60.0 },
            ],
            tp: 1,
            throughput: 1.0,
        }
    }

    fn device(mhz: f64) -> GpuDevice {
        GpuDevice::new(
            "gpu0",
            "llm",
            a100_like(),
            mhz,
            PrefixKvCache::new(16, 16),
            MmCache::new(1 << 30),
        )
        .unwrap()
    }

    #[test]
    fn service_time_formula() {
        let m = StageServiceModel { fixed_time: 1.0, compute_time: 4.0, ..Default::default() };
        assert_eq!(service_time_at(&m, 1.0, &WorkVector::default()), 5.0);
        assert_eq!(service_time_at(&m, 0.5, &WorkVector::default()), 9.0);
    }

    #[test]
    fn service_time_uses_all_terms() {
        let m = StageServiceModel {
            fixed_time: 0.5,
            compute_time: 1.0,
            per_token_prefill: 0.01,
            per_token_decode: 0.1,
            per_frame_encode: 0.2,
        };
        let w = WorkVector {
            uncached_prefill_tokens: 100,
            decode_tokens: 10,
            uncached_frames: 5,
            unit_work: 2.0,
        };
        let expected = 0.5 + (1.0 + 1.0 + 1.0 + 1.0 + 2.0) / 2.0;
        assert!((service_time_at(&m, 2.0, &w) - expected).abs() < 1e-12);
    }

    #[test]
    fn interpolation_exact_at_table_points() {
        let p = a100_like();
        for pt in &p.freq_table {
            assert_eq!(p.point_at(pt.mhz).unwrap(), *pt);
        }
        let mid = p.point_at(712.5).unwrap();
        assert!((mid.perf_scale - 0.7).abs() < 1e-12);
        assert!(p.point_at(200.0).is_none());
        assert!(p.point_at(2000.0).is_none());
    }

    #[test]
    fn set_frequency_range_and_busy() {
        let mut d = device(1410.0);
        d.set_frequency(SimTime::ZERO, 300.0).unwrap();
        assert_eq!(d.current_freq(), 300.0);
        d.set_frequency(SimTime::ZERO, 1410.0).unwrap();
        assert!(matches!(
            d.set_frequency(SimTime::ZERO, 2000.0),
            Err(SimError::FrequencyOutOfRange { .. })
        ));
        d.begin_service(SimTime::from_secs(1.0));
        assert!(matches!(
            d.set_frequency(SimTime::from_secs(1.0), 300.0),
            Err(SimError::FrequencyChangeMidService { .. })
        ));
    }

    #[test]
    fn power_is_binary_busy_idle() {
        let mut d = device(300.0);
        assert_eq!(d.instantaneous_power(SimTime::ZERO), 60.0);
        d.begin_service(SimTime::from_secs(2.0));
        d.end_service(SimTime::from_secs(4.0));
        assert_eq!(d.instantaneous_power(SimTime::from_secs(1.0)), 60.0);
        assert_eq!(d.instantaneous_power(SimTime::from_secs(3.0)), 117.0);
        assert_eq!(d.instantaneous_power(SimTime::from_secs(5.0)), 60.0);
        // breakpoints only at service boundaries
        let times: Vec<_> = d.power_trace().points().iter().map(|p| p.0.as_secs()).collect();
        assert_eq!(times, vec![0.0, 2.0, 4.0]);
    }

    #[test]
    fn profile_validation() {
        let mut p = a100_like();
        p.freq_table[1].perf_scale = 0.4;
        assert!(p.validate().is_err());
        let mut p = a100_like();
        p.freq_table[0].active_w = 10.0;
        assert!(p.validate().is_err());
        let mut p = a100_like();
        p.freq_table[2].perf_scale = 0.95;
        assert!(p.validate().is_err());
    }

    #[test]
    fn cpu_pool_tracks_cores_and_dram() {
        let mut cpu = CpuPool::new(4, 100);
        cpu.acquire(SimTime::ZERO, 3);
        assert_eq!(cpu.utilization_pct(), 75.0);
        assert!(cpu.reserve_dram(SimTime::ZERO, 60));
        assert!(!cpu.reserve_dram(SimTime::ZERO, 60));
        assert_eq!(cpu.dram_used(), 100);
        cpu.release(SimTime::from_secs(1.0), 3);
        assert_eq!(cpu.util_trace().at(SimTime::from_secs(2.0)), 0.0);
    }

    #[test]
    fn step_trace_breakpoints() {
        let mut t = StepTrace::new(1.0);
        t.set(SimTime::from_secs(2.0), 3.0);
        t.set(SimTime::from_secs(2.0), 4.0);
        assert_eq!(t.at(SimTime::from_secs(2.0)), 4.0);
        assert_eq!(
            t.breakpoints_secs(SimTime::from_secs(5.0)),
            vec![(0.0, 1.0), (2.0, 4.0), (5.0, 4.0)]
        );
    }
}
