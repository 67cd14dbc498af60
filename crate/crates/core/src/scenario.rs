//! Scenario files: parsing, profile resolution and parameter overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::caches::{MmHint, DEFAULT_BLOCK_SIZE};
use crate::error::{Result, SimError};
use crate::prompts::PromptMode;
use crate::resources::AcceleratorProfile;
use crate::routing::{RoutingKind, StickyMode};
use crate::simcore::DEFAULT_EVENT_CAP;
use crate::workflows::Workload;

/// Environment variable that overrides the accelerator profile directory.
pub const PROFILE_DIR_ENV: &str = "CAISIM_PROFILE_DIR";

fn default_sample_interval() -> f64 {
    1.0
}

fn default_busy_util() -> f64 {
    100.0
}

fn default_group() -> String {
    "llm".into()
}

fn default_event_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    /// Seconds; no event after this time is processed.
    pub horizon: f64,
    #[serde(default = "default_sample_interval")]
    pub sample_interval: f64,
    /// Utilization reported for a GPU with at least one request in service.
    #[serde(default = "default_busy_util")]
    pub gpu_busy_util: f64,
    pub workload: Workload,
    pub devices: Vec<DeviceConfig>,
    #[serde(default)]
    pub cpu: CpuConfig,
    #[serde(default)]
    pub routing: RoutingConfig,
    /// Defaults to a single closed-loop stream for OPENEVOLVE.
    #[serde(default)]
    pub load: Option<LoadConfig>,
    #[serde(default)]
    pub caches: CacheConfig,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    #[serde(default = "default_event_cap")]
    pub event_cap: u64,
    #[serde(default)]
    pub frequency_changes: Vec<FrequencyChange>,
    #[serde(default)]
    pub mm_hints: Vec<HintConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: String,
    /// Profile name looked up in the profile directory, or a path to a
    /// profile file relative to the scenario.
    pub profile: String,
    /// Initial SM frequency; the table maximum when absent.
    #[serde(default)]
    pub freq_mhz: Option<f64>,
    #[serde(default = "default_group")]
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuConfig {
    pub cores: u32,
    pub dram_gb: f64,
}

impl Default for CpuConfig {
    fn default() -> Self {
        Self {
            cores: 8,
            dram_gb: 64.0,
        }
    }
}

fn default_seed_stream() -> String {
    "routing".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingConfig {
    #[serde(default)]
    pub kind: RoutingKind,
    #[serde(default = "default_seed_stream")]
    pub seed_stream: String,
    #[serde(default)]
    pub sticky_mode: StickyMode,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            kind: RoutingKind::default(),
            seed_stream: default_seed_stream(),
            sticky_mode: StickyMode::default(),
        }
    }
}

fn default_concurrency() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum LoadConfig {
    Poisson {
        rate: f64,
    },
    ClosedLoop {
        n: u64,
        #[serde(default = "default_concurrency")]
        concurrency: u32,
    },
    Trace {
        path: PathBuf,
    },
}

fn default_kv_capacity() -> usize {
    1 << 20
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

fn default_mm_capacity() -> u64 {
    u64::MAX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    /// Per device.
    #[serde(default = "default_kv_capacity")]
    pub kv_capacity_blocks: usize,
    #[serde(default = "default_block_size")]
    pub kv_block_size: usize,
    /// Per device.
    #[serde(default = "default_mm_capacity")]
    pub mm_capacity_bytes: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            kv_capacity_blocks: default_kv_capacity(),
            kv_block_size: default_block_size(),
            mm_capacity_bytes: default_mm_capacity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyChange {
    pub at: f64,
    pub device: String,
    pub mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HintConfig {
    pub key: String,
    pub hint: MmHint,
}

/// A parsed scenario with its profiles resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub profiles: BTreeMap<String, AcceleratorProfile>,
    /// The scenario as written, after overrides.
    pub raw: Value,
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let raw: Value = serde_json::from_str(&text).map_err(|e| {
            SimError::config(
                format!("{}:{}:{}", path.display(), e.line(), e.column()),
                e.to_string(),
            )
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_value(raw, &base_dir, &stem)
    }

    /// Builds a scenario from JSON. `default_name` is used when the
    /// scenario has no `name`.
    pub fn from_value(raw: Value, base_dir: &Path, default_name: &str) -> Result<Self> {
        let mut config: ScenarioConfig = serde_path_to_error::deserialize(&raw).map_err(|e| {
            let path = e.path().to_string();
            SimError::config(path, e.into_inner().to_string())
        })?;
        if config.name.is_empty() {
            config.name = default_name.to_string();
        }
        validate(&config)?;
        let mut profiles = BTreeMap::new();
        for (i, d) in config.devices.iter().enumerate() {
            if !profiles.contains_key(&d.profile) {
                let file = resolve_profile(&d.profile, base_dir);
                let profile = AcceleratorProfile::load(&file).map_err(|e| match e {
                    SimError::Io { path, source } => SimError::config(
                        format!("devices[{i}].profile"),
                        format!("cannot read {}: {source}", path.display()),
                    ),
                    other => other,
                })?;
                profiles.insert(d.profile.clone(), profile);
            }
        }
        Ok(Self {
            config,
            profiles,
            raw,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Copy with `path` set to `value`; see [`set_path`].
    pub fn with_override(&self, path: &str, value: Value) -> Result<Self> {
        let mut raw = self.raw.clone();
        set_path(&mut raw, path, value)?;
        Self::from_value(raw, &self.base_dir, &self.config.name)
    }

    pub fn profile(&self, name: &str) -> &AcceleratorProfile {
        &self.profiles[name]
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn validate(c: &ScenarioConfig) -> Result<()> {
    let bad = |path: &str, reason: &str| Err(SimError::config(path, reason));
    if !(c.horizon > 0.0) || !c.horizon.is_finite() {
        return bad("horizon", "must be positive");
    }
    if !(c.sample_interval > 0.0) || !c.sample_interval.is_finite() {
        return bad("sample_interval", "must be positive");
    }
    if !(0.0..=100.0).contains(&c.gpu_busy_util) {
        return bad("gpu_busy_util", "must be within [0, 100]");
    }
    if c.devices.is_empty() {
        return bad("devices", "at least one device is required");
    }
    let mut ids = std::collections::BTreeSet::new();
    for (i, d) in c.devices.iter().enumerate() {
        if !ids.insert(d.id.as_str()) {
            return bad(&format!("devices[{i}].id"), "duplicate device id");
        }
    }
    if c.cpu.cores == 0 {
        return bad("cpu.cores", "must be at least 1");
    }
    if !(c.cpu.dram_gb >= 0.0) {
        return bad("cpu.dram_gb", "must be non-negative");
    }
    if c.caches.kv_block_size == 0 {
        return bad("caches.kv_block_size", "must be at least 1");
    }
    for (i, f) in c.frequency_changes.iter().enumerate() {
        if !ids.contains(f.device.as_str()) {
            return bad(&format!("frequency_changes[{i}].device"), "unknown device");
        }
        if !(f.at >= 0.0) {
            return bad(&format!("frequency_changes[{i}].at"), "must be non-negative");
        }
    }
    match &c.load {
        Some(LoadConfig::Poisson { rate }) if !(*rate > 0.0) => bad("load.rate", "must be positive"),
        Some(LoadConfig::ClosedLoop { n, concurrency }) if *n == 0 || *concurrency == 0 => {
            bad("load", "closed loop needs n >= 1 and concurrency >= 1")
        }
        None if !matches!(c.workload, Workload::OpenEvolve(_)) => {
            bad("load", "required for this workload")
        }
        _ => Ok(()),
    }
}

/// Directory searched for named profiles: `$CAISIM_PROFILE_DIR`, else a
/// `profiles` directory next to the scenario's directory, else the
/// profiles shipped with the crate.
pub fn profile_dir(base_dir: &Path) -> PathBuf {
    if let Some(dir) = std::env::var_os(PROFILE_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let sibling = base_dir.join("..").join("profiles");
    if sibling.is_dir() {
        return sibling;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("profiles")
}

fn resolve_profile(reference: &str, base_dir: &Path) -> PathBuf {
    if reference.ends_with(".json") || reference.contains('/') {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    } else {
        profile_dir(base_dir).join(format!("{reference}.json"))
    }
}

/// Sets a dotted path inside a JSON document. Numeric segments index
/// arrays; other segments address object fields, or, inside an array, the
/// element whose `id` equals the segment. Missing object fields are created.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    if path.is_empty() {
        return Err(SimError::config(path, "empty parameter path"));
    }
    let segments: Vec<&str> = path.split('.').collect();
    let mut cur = doc;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let unknown = || SimError::config(path, format!("unknown path segment {seg:?}"));
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*seg).ok_or_else(unknown)?
            }
            Value::Array(items) => {
                let idx = match seg.parse::<usize>() {
                    Ok(n) if n < items.len() => n,
                    Ok(_) => return Err(unknown()),
                    Err(_) => items
                        .iter()
                        .position(|v| v.get("id").and_then(Value::as_str) == Some(seg))
                        .ok_or_else(unknown)?,
                };
                if last {
                    items[idx] = value;
                    return Ok(());
                }
                &mut items[idx]
            }
            _ => return Err(unknown()),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Parses a command-line value: JSON when it parses, a string otherwise.
pub fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn set_path_by_index_and_id() {
        let mut v = json!({"devices":[{"id":"gpu0","freq_mhz":1410},{"id":"gpu1","freq_mhz":1410}],
                           "workload":{"params":{"k":5}}});
        set_path(&mut v, "devices.gpu1.freq_mhz", json!(300)).unwrap();
        set_path(&mut v, "devices.0.freq_mhz", json!(570)).unwrap();
        set_path(&mut v, "workload.params.k", json!(25)).unwrap();
        assert_eq!(v["devices"][1]["freq_mhz"], 300);
        assert_eq!(v["devices"][0]["freq_mhz"], 570);
        assert_eq!(v["workload"]["params"]["k"], 25);
        assert!(set_path(&mut v, "devices.gpu9.freq_mhz", json!(1)).is_err());
        assert!(set_path(&mut v, "nope.x", json!(1)).is_err());
        assert!(set_path(&mut v, "workload.params.k.x", json!(1)).is_err());
    }

    #[test]
    fn parse_value_falls_back_to_string() {
        assert_eq!(parse_value("300"), json!(300));
        assert_eq!(parse_value("OPTIMIZED"), json!("OPTIMIZED"));
        assert_eq!(parse_value("\"x\""), json!("x"));
    }

    #[test]
    fn config_errors_name_the_field() {
        let raw = json!({"seed": 1, "horizon": "soon", "workload": {}, "devices": []});
        match Scenario::from_value(raw, Path::new("."), "t") {
            Err(SimError::Config { path, .. }) => assert_eq!(path, "horizon"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_kinds_parse() {
        let l: LoadConfig = serde_json::from_value(json!({"kind":"CLOSED_LOOP","n":3})).unwrap();
        assert_eq!(l, LoadConfig::ClosedLoop { n: 3, concurrency: 1 });
        let p: LoadConfig = serde_json::from_value(json!({"kind":"POISSON","rate":0.1})).unwrap();
        assert_eq!(p, LoadConfig::Poisson { rate: 0.1 });
    }
}
