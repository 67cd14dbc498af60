//! The simulation loop: arrivals, stage scheduling on CPU and GPU
//! resources, cache consultation, and report assembly.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::caches::{MmCache, PrefixKvCache};
use crate::error::{Result, SimError};
use crate::loadgen::{closed_loop, load_trace, poisson_arrivals};
use crate::metrics::{
    cost, dominance, energy_wh, percentile, DeviceReport, Dominance, LatencySummary, MetricsReport,
    TimelineSample,
};
use crate::prompts::{evolve_template, synthetic_tokens, ProgramDb, PromptTemplate, Segment, Volatility};
use crate::resources::{service_time_at, CpuPool, GpuDevice, Server, WorkVector};
use crate::routing::{ReplicaView, RoutingPolicy};
use crate::scenario::{LoadConfig, Scenario};
use crate::simcore::{rng_substream, EventQueue, RngStream, SimTime};
use crate::workflows::{
    build_workflow, rag_retrieval, Payload, Request, ResourceBinding, StageKind, WorkflowSpec, Workload,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrival { stream: u32 },
    StageDone { req: usize, stage: usize },
    FrequencyChange { device: usize, change: usize },
}

/// Where a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEndState {
    pub clock: SimTime,
    pub completed: u64,
    pub unfinished: u64,
    pub events: u64,
}

enum Arrivals {
    Open { times: Vec<SimTime>, next: usize },
    Closed { n: u64, concurrency: u32, issued: u64, per_stream: Vec<u64> },
}

/// One self-contained simulation instance.
pub struct Simulation {
    scenario: Scenario,
    workflow: WorkflowSpec,
    queue: EventQueue<Event>,
    cpu: CpuPool,
    gpus: Vec<GpuDevice>,
    groups: BTreeMap<String, Vec<usize>>,
    cpu_queue: VecDeque<(usize, usize)>,
    gpu_queues: Vec<VecDeque<(usize, usize)>>,
    in_flight: Vec<u32>,
    pending_freq: Vec<Option<f64>>,
    requests: Vec<Request>,
    routing: RoutingPolicy,
    arrivals: Arrivals,
    db: ProgramDb,
    score_rng: RngStream,
    sample_rng: RngStream,
    chunk_rng: RngStream,
    horizon: SimTime,
    completed: u64,
    stage_time: Vec<(f64, u64)>,
    dram_spills: u64,
    warnings: Vec<String>,
    end: Option<SimEndState>,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let cfg = &scenario.config;
        let mut gpus = Vec::with_capacity(cfg.devices.len());
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, d) in cfg.devices.iter().enumerate() {
            let profile = scenario.profile(&d.profile).clone();
            let mhz = d.freq_mhz.unwrap_or_else(|| profile.max_mhz());
            let mut mm = MmCache::new(cfg.caches.mm_capacity_bytes);
            for h in &cfg.mm_hints {
                mm.hint(&h.key, h.hint);
            }
            let kv = PrefixKvCache::new(cfg.caches.kv_capacity_blocks, cfg.caches.kv_block_size);
            gpus.push(GpuDevice::new(&d.id, &d.group, profile, mhz, kv, mm)?);
            groups.entry(d.group.clone()).or_default().push(i);
        }
        let group_names: Vec<&str> = groups.keys().map(String::as_str).collect();
        let workflow = build_workflow(&cfg.workload, &group_names)?;
        for s in &workflow.stages {
            if let ResourceBinding::Cpu { cores } = s.resource {
                if cores > cfg.cpu.cores {
                    return Err(SimError::InvalidWorkflow(format!(
                        "stage {} needs {cores} cores but the pool has {}",
                        s.id, cfg.cpu.cores
                    )));
                }
            }
        }

        let seed = cfg.seed;
        let mut warnings = Vec::new();
        let load = match (&cfg.load, &cfg.workload) {
            (Some(l), _) => l.clone(),
            (None, Workload::OpenEvolve(p)) => LoadConfig::ClosedLoop {
                n: p.iterations,
                concurrency: 1,
            },
            (None, _) => return Err(SimError::config("load", "required for this workload")),
        };
        let arrivals = match load {
            LoadConfig::Poisson { rate } => {
                let s = poisson_arrivals(rate, cfg.horizon, &mut rng_substream(seed, "arrivals"))?;
                Arrivals::Open { times: s.times, next: 0 }
            }
            LoadConfig::Trace { path } => {
                let s = load_trace(&scenario.resolve_path(&path))?;
                warnings.extend(s.warnings);
                Arrivals::Open { times: s.times, next: 0 }
            }
            LoadConfig::ClosedLoop { n, concurrency } => {
                closed_loop(n, concurrency)?;
                Arrivals::Closed {
                    n,
                    concurrency,
                    issued: 0,
                    per_stream: vec![0; concurrency as usize],
                }
            }
        };

        let mut db = ProgramDb::new();
        if let Workload::OpenEvolve(p) = &cfg.workload {
            for i in 0..p.initial_programs {
                db.insert(format!("seed{i}"), p.initial_score, p.program_tokens)?;
            }
        }

        let mut sim = Self {
            workflow,
            queue: EventQueue::new(),
            cpu: CpuPool::new(cfg.cpu.cores, (cfg.cpu.dram_gb * 1e9).round() as u64),
            gpu_queues: vec![VecDeque::new(); gpus.len()],
            in_flight: vec![0; gpus.len()],
            pending_freq: vec![None; gpus.len()],
            gpus,
            groups,
            cpu_queue: VecDeque::new(),
            requests: Vec::new(),
            routing: RoutingPolicy::new(
                cfg.routing.kind,
                cfg.routing.sticky_mode,
                rng_substream(seed, &cfg.routing.seed_stream),
            ),
            arrivals,
            db,
            score_rng: rng_substream(seed, "scores"),
            sample_rng: rng_substream(seed, "db_sample"),
            chunk_rng: rng_substream(seed, "chunks"),
            horizon: SimTime::from_secs(cfg.horizon),
            completed: 0,
            stage_time: Vec::new(),
            dram_spills: 0,
            warnings,
            end: None,
            scenario: scenario.clone(),
        };
        sim.stage_time = vec![(0.0, 0); sim.workflow.len()];
        sim.schedule_initial()?;
        Ok(sim)
    }

    fn schedule_initial(&mut self) -> Result<()> {
        match &mut self.arrivals {
            Arrivals::Open { times, next } => {
                if let Some(&t) = times.first() {
                    *next = 1;
                    self.queue.push(t, Event::Arrival { stream: 0 })?;
                }
            }
            Arrivals::Closed { n, concurrency, .. } => {
                for s in 0..(*n).min(u64::from(*concurrency)) as u32 {
                    self.queue.push(SimTime::ZERO, Event::Arrival { stream: s })?;
                }
            }
        }
        let changes = self.scenario.config.frequency_changes.clone();
        for (i, c) in changes.iter().enumerate() {
            let device = self.gpus.iter().position(|g| g.id == c.device).unwrap();
            self.queue
                .push(SimTime::from_secs(c.at), Event::FrequencyChange { device, change: i })?;
        }
        Ok(())
    }

    pub fn workflow(&self) -> &WorkflowSpec {
        &self.workflow
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn devices(&self) -> &[GpuDevice] {
        &self.gpus
    }

    pub fn cpu(&self) -> &CpuPool {
        &self.cpu
    }

    pub fn program_db(&self) -> &ProgramDb {
        &self.db
    }

    /// Processes events up to the horizon. Running twice returns the
    /// cached end state.
    pub fn run(&mut self) -> Result<SimEndState> {
        if let Some(end) = self.end {
            return Ok(end);
        }
        let cap = self.scenario.config.event_cap;
        let mut clock = SimTime::ZERO;
        while let Some(t) = self.queue.peek_time() {
            if t > self.horizon {
                break;
            }
            if self.queue.processed() >= cap {
                return Err(SimError::Livelock { cap });
            }
            let ev = self.queue.pop().expect("peeked");
            clock = ev.time;
            match ev.event {
                Event::Arrival { stream } => self.on_arrival(stream, clock)?,
                Event::StageDone { req, stage } => self.on_stage_done(req, stage, clock)?,
                Event::FrequencyChange { device, change } => {
                    let mhz = self.scenario.config.frequency_changes[change].mhz;
                    self.on_frequency_change(device, mhz, clock)?;
                }
            }
        }
        let end = SimEndState {
            clock,
            completed: self.completed,
            unfinished: self.requests.len() as u64 - self.completed,
            events: self.queue.processed(),
        };
        self.end = Some(end);
        Ok(end)
    }

    fn on_arrival(&mut self, stream: u32, now: SimTime) -> Result<()> {
        let id = self.requests.len() as u64;
        let session = match &mut self.arrivals {
            Arrivals::Open { times, next } => {
                if let Some(&t) = times.get(*next) {
                    *next += 1;
                    self.queue.push(t, Event::Arrival { stream: 0 })?;
                }
                (id, 1, 0)
            }
            Arrivals::Closed { issued, per_stream, concurrency, .. } => {
                *issued += 1;
                let k = per_stream[stream as usize];
                per_stream[stream as usize] += 1;
                (k, u64::from(*concurrency), u64::from(stream))
            }
        };
        let payload = self.payload_for(id, session);
        let req = Request::new(id, stream, now, payload, &self.workflow);
        self.requests.push(req);
        let idx = self.requests.len() - 1;
        let roots: Vec<usize> = self.workflow.roots().collect();
        for s in roots {
            self.stage_ready(idx, s, now)?;
        }
        Ok(())
    }

    /// `session` is `(ordinal within stream, streams, stream)`.
    fn payload_for(&mut self, id: u64, session: (u64, u64, u64)) -> Payload {
        let seed = self.scenario.config.seed;
        match &self.scenario.config.workload {
            Workload::VideoQa(p) => {
                let (k, streams, stream) = session;
                let mut video = (k / p.requests_per_video) * streams + stream;
                if p.n_videos > 0 {
                    video %= p.n_videos;
                }
                let mut rng = rng_substream(seed, &format!("videos/{video}"));
                let jitter = 1.0 + p.video_seconds_jitter * (2.0 * rng.uniform() - 1.0);
                Payload {
                    video_key: Some(format!("video{video}")),
                    frames: Some(p.frames),
                    video_bytes: Some(p.video_bytes),
                    audio_seconds: Some(p.video_seconds * jitter),
                    query_tokens: Some(p.question_tokens),
                    ..Default::default()
                }
            }
            Workload::OpenEvolve(_) => Payload {
                iteration: Some(id),
                ..Default::default()
            },
            Workload::Rag(p) => Payload {
                query_tokens: Some(p.query_tokens),
                k: Some(p.k),
                ..Default::default()
            },
            Workload::Custom(_) => Payload::default(),
        }
    }

    fn stage_ready(&mut self, req: usize, stage: usize, now: SimTime) -> Result<()> {
        self.requests[req].stages[stage].ready = Some(now);
        match self.workflow.stages[stage].resource.clone() {
            ResourceBinding::Cpu { .. } => {
                self.cpu_queue.push_back((req, stage));
                self.dispatch_cpu(now)
            }
            ResourceBinding::Gpu { group } => {
                let members = &self.groups[&group];
                let key = self.requests[req].content_key().map(str::to_owned);
                let views: Vec<ReplicaView> = members
                    .iter()
                    .map(|&d| ReplicaView {
                        in_flight: self.in_flight[d],
                        cached_bytes: key.as_deref().map_or(0, |k| self.gpus[d].mm_cache.resident_bytes(k)),
                    })
                    .collect();
                let pick = self
                    .routing
                    .route(&group, self.requests[req].id, key.as_deref(), &views)?;
                let device = members[pick];
                self.requests[req].stages[stage].device = Some(device);
                self.in_flight[device] += 1;
                self.gpu_queues[device].push_back((req, stage));
                self.dispatch_gpu(device, now)
            }
        }
    }

    /// Strict FIFO: the head waits for enough cores even if later work fits.
    fn dispatch_cpu(&mut self, now: SimTime) -> Result<()> {
        while let Some(&(req, stage)) = self.cpu_queue.front() {
            let ResourceBinding::Cpu { cores } = self.workflow.stages[stage].resource else {
                unreachable!("cpu queue holds cpu stages")
            };
            if cores > self.cpu.free_cores() {
                break;
            }
            self.cpu_queue.pop_front();
            self.cpu.acquire(now, cores);
            self.start_stage(req, stage, None, now)?;
        }
        Ok(())
    }

    fn dispatch_gpu(&mut self, device: usize, now: SimTime) -> Result<()> {
        if let Some(mhz) = self.pending_freq[device] {
            if self.gpus[device].active() > 0 {
                return Ok(());
            }
            self.gpus[device].set_frequency(now, mhz)?;
            self.pending_freq[device] = None;
        }
        while self.gpus[device].has_free_slot() {
            let Some((req, stage)) = self.gpu_queues[device].pop_front() else {
                break;
            };
            self.gpus[device].begin_service(now);
            self.start_stage(req, stage, Some(device), now)?;
        }
        Ok(())
    }

    fn on_frequency_change(&mut self, device: usize, mhz: f64, now: SimTime) -> Result<()> {
        // takes effect once the device drains; no new service starts before
        self.pending_freq[device] = Some(mhz);
        self.dispatch_gpu(device, now)
    }

    fn start_stage(&mut self, req: usize, stage: usize, device: Option<usize>, now: SimTime) -> Result<()> {
        let spec = &self.workflow.stages[stage];
        let kind = spec.kind;
        let cache_use = spec.cache_use;
        let model = spec.service_model;
        self.requests[req].stages[stage].start = Some(now);

        let mut work = WorkVector::default();
        let mut extra = 0.0;
        // params are small; cloning frees `self` for the prompt builders
        let workload = self.scenario.config.workload.clone();
        match (&workload, kind) {
            (Workload::VideoQa(p), StageKind::VideoDecode | StageKind::FramePrep) => {
                work.uncached_frames = p.frames;
            }
            (Workload::VideoQa(p), StageKind::Stt) => {
                work.unit_work = self.requests[req].payload.audio_seconds.unwrap_or(0.0) * p.stt_rtf;
            }
            (Workload::VideoQa(p), StageKind::MmLlm) => {
                let r = &self.requests[req];
                let mut prompt = synthetic_tokens("vqa_system", 0..p.system_tokens);
                prompt.extend(synthetic_tokens(&format!("q{}", r.id), 0..p.question_tokens));
                self.requests[req].prompt = prompt;
                work.decode_tokens = p.decode_tokens;
                work.uncached_frames = p.frames;
            }
            (Workload::OpenEvolve(p), StageKind::BuildPrompt) => {
                let prompt = self.evolve_prompt(p.n_top, p.n_diverse, p.preamble_tokens)?;
                self.requests[req].prompt = prompt;
            }
            (Workload::OpenEvolve(p), StageKind::Llm) => {
                work.decode_tokens = p.decode_tokens;
            }
            (Workload::Rag(p), StageKind::Embed) => {
                work.uncached_prefill_tokens = p.query_tokens;
            }
            (Workload::Rag(p), StageKind::VectorSearch) => {
                let r = rag_retrieval(&self.cpu, p.k, p.db_bytes, p.db_chunks, &p.retrieval)?;
                let held = r.dram_delta.min(self.cpu.dram_capacity - self.cpu.dram_used());
                self.cpu.reserve_dram(now, held);
                self.requests[req].dram_held = held;
                if r.spilled {
                    self.dram_spills += 1;
                }
                extra = r.duration;
            }
            (Workload::Rag(p), StageKind::Generate) => {
                let prompt = self.rag_prompt(p.k, p.db_chunks, p.chunk_tokens, p.chunk_overlap, p.query_tokens, req);
                self.requests[req].prompt = prompt;
                work.decode_tokens = p.decode_tokens;
            }
            _ => {}
        }

        let speed = match device {
            Some(d) => {
                let dev = &mut self.gpus[d];
                let r = &mut self.requests[req];
                if cache_use.kv() && !r.prompt.is_empty() {
                    let m = dev.kv_cache.lookup(&r.prompt, now);
                    work.uncached_prefill_tokens = (r.prompt.len() - m.hit_tokens) as u64;
                    r.stages[stage].kv_hit_tokens = m.hit_tokens as u64;
                    r.kv_match = Some(m);
                } else if matches!(kind, StageKind::Llm | StageKind::MmLlm | StageKind::Generate) {
                    work.uncached_prefill_tokens = r.prompt.len() as u64;
                }
                if cache_use.mm() {
                    if let (Some(key), Some(size)) = (r.payload.video_key.as_deref(), r.payload.video_bytes) {
                        // an object that cannot fit is simply recomputed
                        let hit = dev.mm_cache.access(key, size, now).is_ok_and(|a| a.hit);
                        if hit {
                            work.uncached_frames = 0;
                        }
                        r.stages[stage].mm_hit = Some(hit);
                    }
                }
                dev.speed()
            }
            None => self.cpu.speed(),
        };
        let duration = service_time_at(&model, speed, &work) + extra;
        let st = &mut self.stage_time[stage];
        st.0 += duration;
        st.1 += 1;
        let end = now + SimTime::from_secs(duration);
        self.queue.push(end, Event::StageDone { req, stage })?;
        Ok(())
    }

    fn evolve_prompt(&mut self, n_top: usize, n_diverse: usize, preamble: u64) -> Result<Vec<u32>> {
        let mode = self.scenario.config.prompt_mode;
        let template = match self.db.latest().cloned() {
            Some(current) => {
                let sample =
                    self.db
                        .sample_excluding(n_top, n_diverse, Some(current.insertion_index), &mut self.sample_rng)?;
                evolve_template(&sample, &current, preamble)
            }
            None if preamble > 0 => {
                let text = (0..preamble).map(|j| format!("system_{j}")).collect::<Vec<_>>().join(" ");
                PromptTemplate::new(vec![Segment::new("system", Volatility::Static, 0, text)])
            }
            None => return Ok(Vec::new()),
        };
        template.render_tokens(mode)
    }

    /// `k` distinct chunks in retrieval order, then the query.
    fn rag_prompt(&mut self, k: u64, db_chunks: u64, chunk: u64, overlap: u64, query: u64, req: usize) -> Vec<u32> {
        let stride = chunk - overlap;
        let mut picked: Vec<u64> = Vec::with_capacity(k as usize);
        while (picked.len() as u64) < k {
            let c = self.chunk_rng.below(db_chunks as usize) as u64;
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        let mut prompt = Vec::with_capacity((k * chunk + query) as usize);
        for c in picked {
            prompt.extend(synthetic_tokens("corpus", c * stride..c * stride + chunk));
        }
        let id = self.requests[req].id;
        prompt.extend(synthetic_tokens(&format!("q{id}"), 0..query));
        prompt
    }

    fn on_stage_done(&mut self, req: usize, stage: usize, now: SimTime) -> Result<()> {
        let spec = &self.workflow.stages[stage];
        let kind = spec.kind;
        self.requests[req].stages[stage].end = Some(now);
        match spec.resource {
            ResourceBinding::Cpu { cores } => self.cpu.release(now, cores),
            ResourceBinding::Gpu { .. } => {
                let d = self.requests[req].stages[stage].device.expect("gpu stage has a device");
                self.gpus[d].end_service(now);
                self.in_flight[d] -= 1;
                let r = &mut self.requests[req];
                if let Some(m) = r.kv_match.take() {
                    // admission failures are counted by the cache
                    let _ = self.gpus[d].kv_cache.commit(&r.prompt, &m, now);
                }
            }
        }
        if kind == StageKind::VectorSearch {
            let held = std::mem::take(&mut self.requests[req].dram_held);
            self.cpu.release_dram(now, held);
        }
        if kind == StageKind::DbInsert {
            if let Workload::OpenEvolve(p) = &self.scenario.config.workload {
                let noise = p.score_noise * (2.0 * self.score_rng.uniform() - 1.0);
                let score = (p.score_mean + noise).clamp(0.0, 1.0);
                let it = self.requests[req].payload.iteration.unwrap_or(self.requests[req].id);
                self.db.insert(format!("gen{it}"), score, p.program_tokens)?;
            }
        }

        let dependents: Vec<usize> = self.workflow.dependents(stage).to_vec();
        for s in dependents {
            let pending = &mut self.requests[req].pending_deps[s];
            *pending -= 1;
            if *pending == 0 {
                self.stage_ready(req, s, now)?;
            }
        }
        if self.requests[req].stages.iter().all(|s| s.end.is_some()) {
            self.requests[req].completion = Some(now);
            self.completed += 1;
            if let Arrivals::Closed { n, issued, .. } = &self.arrivals {
                if issued < n {
                    let stream = self.requests[req].stream;
                    self.queue.push(now, Event::Arrival { stream })?;
                }
            }
        }

        match self.workflow.stages[stage].resource {
            ResourceBinding::Cpu { .. } => self.dispatch_cpu(now),
            ResourceBinding::Gpu { .. } => {
                let d = self.requests[req].stages[stage].device.unwrap();
                self.dispatch_gpu(d, now)
            }
        }
    }

    fn makespan(&self) -> SimTime {
        self.end.map_or(SimTime::ZERO, |e| e.clock)
    }

    /// Samples every `sample_interval` seconds over `[0, makespan]`.
    pub fn timeline(&self) -> Vec<TimelineSample> {
        let cfg = &self.scenario.config;
        let dt = SimTime::from_secs(cfg.sample_interval).as_micros().max(1);
        let n = self.makespan().as_micros() / dt + 1;
        (0..n)
            .map(|i| {
                let t = SimTime::from_micros(i * dt);
                TimelineSample {
                    t: t.as_secs(),
                    cpu_util: self.cpu.util_trace().at(t),
                    gpu_util: self
                        .gpus
                        .iter()
                        .map(|g| if g.busy_trace().at(t) > 0.0 { cfg.gpu_busy_util } else { 0.0 })
                        .collect(),
                    gpu_power: self.gpus.iter().map(|g| g.instantaneous_power(t)).collect(),
                    dram_used: self.cpu.dram_trace().at(t) as u64,
                }
            })
            .collect()
    }

    /// Report for the finished run.
    pub fn report(&self) -> MetricsReport {
        let cfg = &self.scenario.config;
        let end = self.makespan();
        let makespan = end.as_secs();
        let timeline = self.timeline();

        let latencies: Vec<f64> = self.requests.iter().filter_map(Request::latency).collect();
        let mut devices = Vec::with_capacity(self.gpus.len());
        let mut total_energy = 0.0;
        let (mut kv_hit, mut kv_total, mut kv_evict, mut kv_fail) = (0u64, 0u64, 0u64, 0u64);
        let (mut life_sum, mut life_n) = (0u128, 0u64);
        let (mut mm_hit, mut mm_total, mut mm_evict, mut mm_rej) = (0u64, 0u64, 0u64, 0u64);
        for g in &self.gpus {
            let e = energy_wh(&g.power_trace().breakpoints_secs(end)).expect("trace is time-ordered");
            total_energy += e;
            let busy = busy_seconds(g, end);
            let kc = g.kv_cache.counters();
            kv_hit += kc.hit_tokens;
            kv_total += kc.total_tokens;
            kv_evict += kc.evictions;
            kv_fail += kc.admission_failures;
            let (s, n) = g.kv_cache.lifetime_totals(end);
            life_sum += s;
            life_n += n;
            let mc = g.mm_cache.counters();
            mm_hit += mc.hit_objects;
            mm_total += mc.total_objects;
            mm_evict += mc.evictions;
            mm_rej += mc.rejected;
            devices.push(DeviceReport {
                id: g.id.clone(),
                group: g.group.clone(),
                profile: g.profile.name.clone(),
                freq_mhz: g.current_freq(),
                energy_wh: e,
                busy_s: busy,
                kv_hit_rate_pct: g.kv_cache.stats(end).hit_rate_pct,
                mm_hit_rate_pct: mc.hit_rate_pct(),
            });
        }
        let pct = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };

        let per_gpu: Vec<f64> = timeline
            .iter()
            .map(|s| {
                s.gpu_power
                    .iter()
                    .zip(&self.gpus)
                    .map(|(p, g)| p / f64::from(g.profile.tp))
                    .fold(0.0, f64::max)
            })
            .collect();
        let totals: Vec<f64> = timeline.iter().map(|s| s.gpu_power.iter().sum()).collect();
        let prices: Vec<f64> = self.gpus.iter().map(GpuDevice::price_per_hour).collect();
        let peak_dram = self
            .cpu
            .dram_trace()
            .points()
            .iter()
            .map(|p| p.1 as u64)
            .max()
            .unwrap_or(0);

        let mut warnings = self.warnings.clone();
        if kv_fail > 0 {
            warnings.push(format!("{kv_fail} kv cache admission failure(s)"));
        }
        if self.dram_spills > 0 {
            warnings.push(format!("{} retrieval(s) spilled past DRAM capacity", self.dram_spills));
        }
        let stage_mean_s = self
            .workflow
            .stages
            .iter()
            .zip(&self.stage_time)
            .filter(|(_, t)| t.1 > 0)
            .map(|(s, t)| (s.id.clone(), t.0 / t.1 as f64))
            .collect();

        MetricsReport {
            scenario: cfg.name.clone(),
            seed: cfg.seed,
            completed: self.completed,
            unfinished: self.requests.len() as u64 - self.completed,
            latency_s: LatencySummary::from_latencies(&latencies),
            e2e_makespan_s: makespan,
            energy_wh: total_energy,
            devices,
            p99_power_w: percentile(&per_gpu, 99.0).unwrap_or(0.0),
            p99_power_total_w: percentile(&totals, 99.0).unwrap_or(0.0),
            cost_usd: cost(makespan, &prices),
            kv_hit_rate_pct: pct(kv_hit, kv_total),
            avg_block_lifetime_s: if life_n == 0 { 0.0 } else { life_sum as f64 / life_n as f64 / 1e6 },
            block_lifetime_defined: life_n > 0,
            kv_evictions: kv_evict,
            kv_admission_failures: kv_fail,
            mm_hit_rate_pct: pct(mm_hit, mm_total),
            mm_evictions: mm_evict,
            mm_rejected: mm_rej,
            dominance: dominance(&timeline).unwrap_or(Dominance {
                cpu_frac: 1.0,
                gpu_frac: 0.0,
            }),
            peak_dram_bytes: peak_dram,
            dram_spills: self.dram_spills,
            events: self.queue.processed(),
            warnings,
            stage_mean_s,
            scenario_echo: self.scenario.raw.clone(),
        }
    }
}

/// Seconds with at least one request in service, up to `end`.
fn busy_seconds(g: &GpuDevice, end: SimTime) -> f64 {
    let bp = g.busy_trace().breakpoints_secs(end);
    bp.windows(2)
        .filter(|w| w[0].1 > 0.0)
        .map(|w| w[1].0 - w[0].0)
        .sum()
}

/// Runs a scenario to completion and returns its report and timeline.
pub fn run_scenario(scenario: &Scenario) -> Result<(MetricsReport, Vec<TimelineSample>)> {
    let mut sim = Simulation::new(scenario)?;
    sim.run()?;
    Ok((sim.report(), sim.timeline()))
}
