//! Stage DAGs for the built-in compound pipelines and their parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::caches::PrefixMatch;
use crate::error::{Result, SimError};
use crate::resources::{CpuPool, StageServiceModel};
use crate::simcore::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageKind {
    VideoDecode,
    Stt,
    FramePrep,
    MmLlm,
    BuildPrompt,
    Llm,
    Evaluate,
    DbInsert,
    Embed,
    VectorSearch,
    Generate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResourceBinding {
    Cpu { cores: u32 },
    Gpu { group: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CacheUse {
    #[default]
    None,
    Kv,
    Mm,
    Both,
}

impl CacheUse {
    pub fn kv(self) -> bool {
        matches!(self, CacheUse::Kv | CacheUse::Both)
    }

    pub fn mm(self) -> bool {
        matches!(self, CacheUse::Mm | CacheUse::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: String,
    pub kind: StageKind,
    pub resource: ResourceBinding,
    pub service_model: StageServiceModel,
    #[serde(default)]
    pub cache_use: CacheUse,
    #[serde(default)]
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowSpec {
    pub stages: Vec<StageSpec>,
    deps: Vec<Vec<usize>>,
    dependents: Vec<Vec<usize>>,
}

impl WorkflowSpec {
    /// Resolves dependency names and rejects unknown names and cycles.
    pub fn new(stages: Vec<StageSpec>) -> Result<Self> {
        if stages.is_empty() {
            return Err(SimError::InvalidWorkflow("workflow has no stages".into()));
        }
        let index: BTreeMap<&str, usize> = stages
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        if index.len() != stages.len() {
            return Err(SimError::InvalidWorkflow("duplicate stage id".into()));
        }
        let mut deps = Vec::with_capacity(stages.len());
        for s in &stages {
            s.service_model.validate()?;
            let mut d = Vec::new();
            for name in &s.depends_on {
                let &j = index.get(name.as_str()).ok_or_else(|| {
                    SimError::InvalidWorkflow(format!("stage {} depends on unknown stage {name}", s.id))
                })?;
                d.push(j);
            }
            deps.push(d);
        }
        let mut dependents = vec![Vec::new(); stages.len()];
        for (i, d) in deps.iter().enumerate() {
            for &j in d {
                dependents[j].push(i);
            }
        }
        // Kahn's algorithm as the cycle check
        let mut indeg: Vec<usize> = deps.iter().map(Vec::len).collect();
        let mut ready: Vec<usize> = (0..stages.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = ready.pop() {
            seen += 1;
            for &k in &dependents[i] {
                indeg[k] -= 1;
                if indeg[k] == 0 {
                    ready.push(k);
                }
            }
        }
        if seen != stages.len() {
            return Err(SimError::InvalidWorkflow("dependency cycle".into()));
        }
        Ok(Self {
            stages,
            deps,
            dependents,
        })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn deps(&self, stage: usize) -> &[usize] {
        &self.deps[stage]
    }

    pub fn dependents(&self, stage: usize) -> &[usize] {
        &self.dependents[stage]
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.deps[i].is_empty())
    }

    pub fn stage_index(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.id == id)
    }

    /// GPU groups the workflow binds to.
    pub fn gpu_groups(&self) -> Vec<&str> {
        let mut g: Vec<&str> = self
            .stages
            .iter()
            .filter_map(|s| match &s.resource {
                ResourceBinding::Gpu { group } => Some(group.as_str()),
                ResourceBinding::Cpu { .. } => None,
            })
            .collect();
        g.sort_unstable();
        g.dedup();
        g
    }
}

fn default_llm_group() -> String {
    "llm".into()
}

fn default_stt_group() -> String {
    "stt".into()
}

fn default_one() -> u32 {
    1
}

fn default_one_u64() -> u64 {
    1
}

fn default_decode_tokens() -> u64 {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoQaParams {
    #[serde(default = "default_llm_group")]
    pub llm_group: String,
    #[serde(default = "default_stt_group")]
    pub stt_group: String,
    /// Frames per video.
    pub frames: u64,
    /// Bytes of encoded frames per video; the MM cache object size.
    pub video_bytes: u64,
    /// Mean audio length per video.
    pub video_seconds: f64,
    /// Relative half-width of the uniform jitter on `video_seconds`.
    #[serde(default)]
    pub video_seconds_jitter: f64,
    #[serde(default = "default_one_u64")]
    pub requests_per_video: u64,
    /// Catalog size; 0 means every video is new.
    #[serde(default)]
    pub n_videos: u64,
    #[serde(default)]
    pub system_tokens: u64,
    #[serde(default)]
    pub question_tokens: u64,
    #[serde(default = "default_decode_tokens")]
    pub decode_tokens: u64,
    /// STT compute seconds per audio second at speed 1.
    pub stt_rtf: f64,
    #[serde(default = "default_one")]
    pub decode_cores: u32,
    #[serde(default = "default_one")]
    pub frame_prep_cores: u32,
    pub decode: StageServiceModel,
    pub stt: StageServiceModel,
    pub frame_prep: StageServiceModel,
    pub mm_llm: StageServiceModel,
}

fn default_n_top() -> usize {
    4
}

fn default_n_diverse() -> usize {
    10
}

fn default_program_tokens() -> u64 {
    256
}

fn default_iterations() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenEvolveParams {
    #[serde(default = "default_llm_group")]
    pub llm_group: String,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_n_top")]
    pub n_top: usize,
    #[serde(default = "default_n_diverse")]
    pub n_diverse: usize,
    #[serde(default = "default_program_tokens")]
    pub program_tokens: u64,
    #[serde(default)]
    pub preamble_tokens: u64,
    /// Programs in the database before the first iteration.
    #[serde(default)]
    pub initial_programs: u64,
    #[serde(default)]
    pub initial_score: f64,
    /// New programs score `score_mean` plus uniform noise of half-width
    /// `score_noise`, clamped to [0, 1].
    #[serde(default)]
    pub score_mean: f64,
    #[serde(default)]
    pub score_noise: f64,
    #[serde(default = "default_decode_tokens")]
    pub decode_tokens: u64,
    pub build_prompt: StageServiceModel,
    pub llm: StageServiceModel,
    pub evaluate: StageServiceModel,
    pub db_insert: StageServiceModel,
    #[serde(default = "default_one")]
    pub evaluate_cores: u32,
}

fn default_chunk_tokens() -> u64 {
    1000
}

fn default_chunk_overlap() -> u64 {
    100
}

fn default_spill_penalty() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagParams {
    #[serde(default = "default_llm_group")]
    pub llm_group: String,
    pub k: u64,
    pub query_tokens: u64,
    #[serde(default = "default_chunk_tokens")]
    pub chunk_tokens: u64,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: u64,
    pub db_bytes: u64,
    pub db_chunks: u64,
    pub retrieval: RetrievalModel,
    #[serde(default = "default_decode_tokens")]
    pub decode_tokens: u64,
    #[serde(default = "default_one")]
    pub embed_cores: u32,
    #[serde(default = "default_one")]
    pub search_cores: u32,
    pub embed: StageServiceModel,
    pub generate: StageServiceModel,
}

/// Linear-scan retrieval cost and its DRAM footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalModel {
    /// Seconds per database chunk scanned.
    pub a: f64,
    /// Seconds per retrieved chunk.
    pub b: f64,
    pub working_set_fraction: f64,
    /// Duration multiplier when the working set does not fit in DRAM.
    #[serde(default = "default_spill_penalty")]
    pub spill_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum Workload {
    #[serde(rename = "VIDEO_QA")]
    VideoQa(VideoQaParams),
    #[serde(rename = "OPENEVOLVE")]
    OpenEvolve(OpenEvolveParams),
    #[serde(rename = "RAG")]
    Rag(RagParams),
    /// A user-defined DAG. Stages run for their fixed and compute time only.
    #[serde(rename = "CUSTOM")]
    Custom(CustomParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomParams {
    pub stages: Vec<StageSpec>,
}

impl Workload {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Workload::VideoQa(_) => "VIDEO_QA",
            Workload::OpenEvolve(_) => "OPENEVOLVE",
            Workload::Rag(_) => "RAG",
            Workload::Custom(_) => "CUSTOM",
        }
    }
}

fn cpu(cores: u32) -> ResourceBinding {
    ResourceBinding::Cpu { cores: cores.max(1) }
}

fn gpu(group: &str) -> ResourceBinding {
    ResourceBinding::Gpu {
        group: group.to_string(),
    }
}

fn stage(id: &str, kind: StageKind, resource: ResourceBinding, model: StageServiceModel, cache: CacheUse, deps: &[&str]) -> StageSpec {
    StageSpec {
        id: id.into(),
        kind,
        resource,
        service_model: model,
        cache_use: cache,
        depends_on: deps.iter().map(|d| d.to_string()).collect(),
    }
}

/// Builds the stage DAG of `workload`. Every GPU group it binds must be
/// among `groups`.
pub fn build_workflow(workload: &Workload, groups: &[&str]) -> Result<WorkflowSpec> {
    use StageKind::*;
    let stages = match workload {
        Workload::VideoQa(p) => {
            if p.frames == 0 || !(p.video_seconds >= 0.0) || !(p.stt_rtf >= 0.0) {
                return Err(SimError::InvalidWorkflow(
                    "video-qa needs frames >= 1, video_seconds >= 0 and stt_rtf >= 0".into(),
                ));
            }
            if !(0.0..1.0).contains(&p.video_seconds_jitter) {
                return Err(SimError::InvalidWorkflow("video_seconds_jitter must be in [0, 1)".into()));
            }
            if p.requests_per_video == 0 {
                return Err(SimError::InvalidWorkflow("requests_per_video must be >= 1".into()));
            }
            vec![
                stage("decode", VideoDecode, cpu(p.decode_cores), p.decode, CacheUse::None, &[]),
                stage("stt", Stt, gpu(&p.stt_group), p.stt, CacheUse::None, &["decode"]),
                stage("frame_prep", FramePrep, cpu(p.frame_prep_cores), p.frame_prep, CacheUse::None, &["decode"]),
                stage("mm_llm", MmLlm, gpu(&p.llm_group), p.mm_llm, CacheUse::Both, &["stt", "frame_prep"]),
            ]
        }
        Workload::OpenEvolve(p) => {
            if p.iterations == 0 {
                return Err(SimError::InvalidWorkflow("iterations must be >= 1".into()));
            }
            if p.program_tokens == 0 {
                return Err(SimError::InvalidWorkflow("program_tokens must be >= 1".into()));
            }
            vec![
                stage("build_prompt", BuildPrompt, cpu(1), p.build_prompt, CacheUse::None, &[]),
                stage("llm", Llm, gpu(&p.llm_group), p.llm, CacheUse::Kv, &["build_prompt"]),
                stage("evaluate", Evaluate, cpu(p.evaluate_cores), p.evaluate, CacheUse::None, &["llm"]),
                stage("db_insert", DbInsert, cpu(1), p.db_insert, CacheUse::None, &["evaluate"]),
            ]
        }
        Workload::Rag(p) => {
            if p.k > p.db_chunks {
                return Err(SimError::InvalidWorkflow(format!(
                    "k = {} exceeds db_chunks = {}",
                    p.k, p.db_chunks
                )));
            }
            if p.chunk_overlap >= p.chunk_tokens {
                return Err(SimError::InvalidWorkflow("chunk_overlap must be below chunk_tokens".into()));
            }
            let r = &p.retrieval;
            if !(r.a >= 0.0 && r.b > 0.0 && r.spill_penalty >= 1.0) || !(0.0..=1.0).contains(&r.working_set_fraction) {
                return Err(SimError::InvalidWorkflow(
                    "retrieval needs a >= 0, b > 0, spill_penalty >= 1, working_set_fraction in [0, 1]".into(),
                ));
            }
            vec![
                stage("embed", Embed, cpu(p.embed_cores), p.embed, CacheUse::None, &[]),
                stage("vector_search", VectorSearch, cpu(p.search_cores), StageServiceModel::default(), CacheUse::None, &["embed"]),
                stage("generate", Generate, gpu(&p.llm_group), p.generate, CacheUse::Kv, &["vector_search"]),
            ]
        }
        Workload::Custom(p) => p.stages.clone(),
    };
    let wf = WorkflowSpec::new(stages)?;
    for g in wf.gpu_groups() {
        if !groups.contains(&g) {
            return Err(SimError::InvalidWorkflow(format!(
                "{} binds GPU group {g:?} but no device is in that group",
                workload.kind_name()
            )));
        }
    }
    Ok(wf)
}

/// Outcome of the retrieval stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieval {
    pub duration: f64,
    pub dram_delta: u64,
    pub spilled: bool,
}

/// Linear-scan vector search: `a * db_chunks + b * k` seconds, holding
/// `working_set_fraction * db_bytes` of DRAM. If that does not fit next to
/// what is already in use, the duration is multiplied by the spill penalty.
pub fn rag_retrieval(pool: &CpuPool, k: u64, db_bytes: u64, db_chunks: u64, model: &RetrievalModel) -> Result<Retrieval> {
    if k > db_chunks {
        return Err(SimError::InvalidWorkflow(format!("k = {k} exceeds db_chunks = {db_chunks}")));
    }
    let dram_delta = (model.working_set_fraction * db_bytes as f64).round() as u64;
    let mut duration = model.a * db_chunks as f64 + model.b * k as f64;
    let spilled = pool.dram_used() + dram_delta > pool.dram_capacity;
    if spilled {
        duration *= model.spill_penalty;
    }
    Ok(Retrieval {
        duration,
        dram_delta,
        spilled,
    })
}

/// Per-request inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub video_key: Option<String>,
    pub frames: Option<u64>,
    pub video_bytes: Option<u64>,
    pub audio_seconds: Option<f64>,
    pub query_tokens: Option<u64>,
    pub k: Option<u64>,
    pub iteration: Option<u64>,
}

/// Timing and cache outcome of one stage of one request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub ready: Option<SimTime>,
    pub start: Option<SimTime>,
    pub end: Option<SimTime>,
    pub device: Option<usize>,
    pub kv_hit_tokens: u64,
    pub mm_hit: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Request {
    pub id: u64,
    /// Closed-loop stream, or 0 for open-loop arrivals.
    pub stream: u32,
    pub arrival: SimTime,
    pub payload: Payload,
    pub stages: Vec<StageRecord>,
    pub completion: Option<SimTime>,
    pub(crate) pending_deps: Vec<usize>,
    pub(crate) prompt: Vec<u32>,
    pub(crate) kv_match: Option<PrefixMatch>,
    pub(crate) dram_held: u64,
}

impl Request {
    pub fn new(id: u64, stream: u32, arrival: SimTime, payload: Payload, wf: &WorkflowSpec) -> Self {
        Self {
            id,
            stream,
            arrival,
            payload,
            stages: vec![StageRecord::default(); wf.len()],
            completion: None,
            pending_deps: (0..wf.len()).map(|i| wf.deps(i).len()).collect(),
            prompt: Vec::new(),
            kv_match: None,
            dram_held: 0,
        }
    }

    pub fn latency(&self) -> Option<f64> {
        self.completion.map(|c| (c - self.arrival).as_secs())
    }

    pub fn content_key(&self) -> Option<&str> {
        self.payload.video_key.as_deref()
    }
}
