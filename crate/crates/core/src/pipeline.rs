//! End-to-end run: filtration, vehicle reasoning per critical event,
//! environmental reasoning per interval between events, response.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{
    invoke, invoke_many, AgentContext, AgentError, AgentIssue, AgentOutput, AgentRequest, AgentResponse, AgentRole,
    Backend, BackendKind, RemoteClient, RemoteConfig,
};
use crate::environment::{history_from_trace, CausalOutcome, ChangeReport, EnvParams, Origin};
use crate::eval::{Case, EvalFile, ReasoningTask};
use crate::filtration::{select_critical_timestamps, CriticalEvent, FiltrationParams, RouteAssessment};
use crate::response::{FinalResponse, Insight, InsightCategory, ResponseParams};
use crate::synth::{GroundTruth, TruthOrigin, VehicleStatus};
use crate::trace::{serialize_trace, validate_trace, CameraView, SensorFrame, SensorTrace, TraceError};
use crate::vehicle::{
    align_camera_ids, cross_sensor_consistency, gate_range, MotionDescription, VehicleDiagnosis, VehicleFlag,
    VehicleParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub backend: BackendKind,
    pub remote: RemoteConfig,
    pub filtration: FiltrationParams,
    pub vehicle: VehicleParams,
    pub environment: EnvParams,
    pub response: ResponseParams,
    /// s; largest gap allowed between an event and its frame
    pub frame_window: f64,
    /// Where reports are written; not part of the config hash.
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Deterministic,
            remote: RemoteConfig::default(),
            filtration: FiltrationParams::default(),
            vehicle: VehicleParams::default(),
            environment: EnvParams::default(),
            response: ResponseParams::default(),
            frame_window: 0.5,
            output_dir: PathBuf::from("reports"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::validation(Stage::Config, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let v = |r: Result<(), String>| r.map_err(|e| PipelineError::validation(Stage::Config, e));
        v(self.filtration.validate())?;
        v(self.vehicle.validate())?;
        v(self.environment.validate())?;
        v(self.response.validate())?;
        if self.backend == BackendKind::Remote {
            v(self.remote.validate())?;
        }
        if !(self.frame_window.is_finite() && self.frame_window >= 0.0) {
            return v(Err("frame_window must be non-negative".into()));
        }
        Ok(())
    }

    /// sha256 over the canonical JSON of every tunable.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Remote clients read the credential from the environment.
    pub fn make_backend(&self) -> Backend {
        match self.backend {
            BackendKind::Deterministic => Backend::Deterministic,
            BackendKind::Remote => Backend::Remote(RemoteClient::from_env(self.remote.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Trace,
    Filtration,
    Vehicle,
    Environment,
    Response,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string(self).unwrap_or_default();
        f.write_str(s.trim_matches('"'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Backend,
    Io,
}

#[derive(Debug, Error)]
#[error("{stage}: {detail}")]
pub struct PipelineError {
    pub stage: Stage,
    pub class: ErrorClass,
    pub detail: String,
}

impl PipelineError {
    pub fn validation(stage: Stage, detail: impl Into<String>) -> Self {
        Self { stage, class: ErrorClass::Validation, detail: detail.into() }
    }

    fn backend(stage: Stage, e: AgentError) -> Self {
        let class = match e {
            AgentError::MissingContextField { .. } => ErrorClass::Validation,
            _ => ErrorClass::Backend,
        };
        Self { stage, class, detail: e.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Validation => 2,
            ErrorClass::Backend => 3,
            ErrorClass::Io => 74,
        }
    }
}

impl From<TraceError> for PipelineError {
    fn from(e: TraceError) -> Self {
        PipelineError::validation(Stage::Trace, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleResult {
    /// Time of the frame the diagnosis is made at.
    pub frame_t: f64,
    pub vision: MotionDescription,
    pub lidar: MotionDescription,
    pub diagnosis: VehicleDiagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentResult {
    pub changes: ChangeReport,
    pub causal: CausalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub event: CriticalEvent,
    pub vehicle: VehicleResult,
    pub environment: EnvironmentResult,
    pub insights: Vec<Insight>,
    pub response: FinalResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub role: AgentRole,
    pub correlation_id: u64,
    pub issue: AgentIssue,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub trace_hash: String,
    pub backend_counts: BTreeMap<BackendKind, u64>,
    pub fallback_count: u64,
    pub issues: Vec<IssueRecord>,
    /// seconds; excluded from golden comparisons
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub route: RouteAssessment,
    pub events: Vec<EventReport>,
    pub metadata: RunMetadata,
}

impl PipelineReport {
    /// JSON with the wall-time field zeroed, for comparisons.
    pub fn golden_json(&self) -> String {
        let mut r = self.clone();
        r.metadata.wall_time = 0.0;
        serde_json::to_string_pretty(&r).expect("report serializes")
    }
}

/// Runs agents and keeps the usage tally.
struct Runner<'a> {
    backend: &'a Backend,
    meta: RunMetadata,
}

impl Runner<'_> {
    fn record(&mut self, r: &AgentResponse) {
        *self.meta.backend_counts.entry(r.backend).or_default() += 1;
        if r.fell_back() {
            self.meta.fallback_count += 1;
        }
        for issue in &r.issues {
            self.meta.issues.push(IssueRecord { role: r.role, correlation_id: r.correlation_id, issue: issue.clone() });
        }
    }

    fn one(&mut self, stage: Stage, context: AgentContext, id: u64) -> Result<AgentOutput, PipelineError> {
        let req = AgentRequest::new(context, id).map_err(|e| PipelineError::backend(stage, e))?;
        let r = invoke(self.backend, &req).map_err(|e| PipelineError::backend(stage, e))?;
        self.record(&r);
        Ok(r.structured)
    }

    fn many(&mut self, stage: Stage, contexts: Vec<(AgentContext, u64)>) -> Result<Vec<AgentOutput>, PipelineError> {
        let requests = contexts
            .into_iter()
            .map(|(c, id)| AgentRequest::new(c, id))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::backend(stage, e))?;
        let mut out = Vec::with_capacity(requests.len());
        for r in invoke_many(self.backend, &requests) {
            let r = r.map_err(|e| PipelineError::backend(stage, e))?;
            self.record(&r);
            out.push(r.structured);
        }
        Ok(out)
    }
}

fn correlation(event: usize, role: AgentRole) -> u64 {
    let r = AgentRole::ALL.iter().position(|x| *x == role).unwrap_or(0) as u64;
    (event as u64 + 1) * 10 + r
}

fn unexpected(stage: Stage) -> PipelineError {
    PipelineError { stage, class: ErrorClass::Backend, detail: "agent returned the wrong output type".into() }
}

/// Index pair (k, k+1) around an event, stepping back at the end of the trace.
fn frame_pair(trace: &SensorTrace, t: f64, window: f64) -> Result<(usize, usize), PipelineError> {
    if trace.frames.len() < 2 {
        return Err(PipelineError::validation(Stage::Vehicle, "at least two frames are needed"));
    }
    let k = trace.nearest_frame_index(t, window).map_err(|e| PipelineError::validation(Stage::Vehicle, e.to_string()))?;
    Ok(if k + 1 < trace.frames.len() { (k, k + 1) } else { (k - 1, k) })
}

fn route_stage(
    trace: &SensorTrace,
    cfg: &PipelineConfig,
    runner: &mut Runner,
) -> Result<(RouteAssessment, Vec<CriticalEvent>), PipelineError> {
    let ctx = AgentContext::Filtration { meta: trace.meta.clone(), params: cfg.filtration.clone() };
    let AgentOutput::Route(route) = runner.one(Stage::Filtration, ctx, 0)? else {
        return Err(unexpected(Stage::Filtration));
    };
    let events = select_critical_timestamps(trace, &route.thresholds, cfg.filtration.refractory)
        .map_err(|e| PipelineError::validation(Stage::Filtration, e.to_string()))?;
    Ok((route, events))
}

fn vehicle_stage(
    trace: &SensorTrace,
    events: &[CriticalEvent],
    cfg: &PipelineConfig,
    runner: &mut Runner,
) -> Result<Vec<VehicleResult>, PipelineError> {
    let gate = cfg.vehicle.correspondence_gate;
    let mut aligned: Vec<(SensorFrame, SensorFrame)> = Vec::with_capacity(events.len());
    let mut contexts = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let (k, k1) = frame_pair(trace, e.t, cfg.frame_window)?;
        let a = align_camera_ids(&trace.frames[k], gate);
        let b = align_camera_ids(&trace.frames[k1], gate);
        contexts.push((
            AgentContext::LidarDescriptor { frame_t: a.clone(), frame_t1: b.clone(), gate },
            correlation(i, AgentRole::LidarDescriptor),
        ));
        contexts.push((
            AgentContext::VisionDescriptor { frame_t: a.clone(), frame_t1: b.clone(), gate },
            correlation(i, AgentRole::VisionDescriptor),
        ));
        aligned.push((a, b));
    }
    let descriptions = runner.many(Stage::Vehicle, contexts)?;
    let mut motions = Vec::with_capacity(events.len());
    let mut contexts = Vec::new();
    for (i, pair) in descriptions.chunks(2).enumerate() {
        let (AgentOutput::Motion(lidar), AgentOutput::Motion(vision)) = (&pair[0], &pair[1]) else {
            return Err(unexpected(Stage::Vehicle));
        };
        let a = &aligned[i].0;
        let gated = gate_range(&a.lidar_detections, cfg.vehicle.range_limit);
        let lidar_pos = a.lidar_detections.iter().map(|d| (d.object_id, d.position)).collect();
        let camera_pos = a.camera_detections.iter().map(|d| (d.object_id, d.position)).collect();
        let consistency = cross_sensor_consistency(&gated, &lidar_pos, &camera_pos);
        contexts.push((
            AgentContext::VehicleAnalyzer {
                vision: vision.clone(),
                lidar: lidar.clone(),
                consistency,
                params: cfg.vehicle.clone(),
            },
            correlation(i, AgentRole::VehicleAnalyzer),
        ));
        motions.push((vision.clone(), lidar.clone()));
    }
    let diagnoses = runner.many(Stage::Vehicle, contexts)?;
    diagnoses
        .into_iter()
        .zip(motions)
        .zip(&aligned)
        .map(|((d, (vision, lidar)), (a, _))| match d {
            AgentOutput::Diagnosis(diagnosis) => Ok(VehicleResult { frame_t: a.t, vision, lidar, diagnosis }),
            _ => Err(unexpected(Stage::Vehicle)),
        })
        .collect()
}

/// Interval for event `i`: from the previous event's frame (the first frame
/// for the first event) to this event's frame.
fn interval(trace: &SensorTrace, events: &[CriticalEvent], i: usize, window: f64) -> Result<(usize, usize), PipelineError> {
    let (cur, _) = frame_pair(trace, events[i].t, window)?;
    let prev = if i == 0 { 0 } else { frame_pair(trace, events[i - 1].t, window)?.0 };
    Ok(if prev < cur {
        (prev, cur)
    } else if cur > 0 {
        (cur - 1, cur)
    } else {
        (0, 1)
    })
}

fn environment_stage(
    trace: &SensorTrace,
    events: &[CriticalEvent],
    cfg: &PipelineConfig,
    runner: &mut Runner,
) -> Result<Vec<EnvironmentResult>, PipelineError> {
    let gate = cfg.vehicle.correspondence_gate;
    let mut windows = Vec::with_capacity(events.len());
    let mut contexts = Vec::new();
    for i in 0..events.len() {
        let (p, c) = interval(trace, events, i, cfg.frame_window)?;
        let (prev, cur) = (&trace.frames[p], &trace.frames[c]);
        contexts.push((
            AgentContext::EnvChangeDetector { prev: prev.clone(), cur: cur.clone(), gate, params: cfg.environment.clone() },
            correlation(i, AgentRole::EnvChangeDetector),
        ));
        windows.push((prev.t, cur.t));
    }
    let reports = runner.many(Stage::Environment, contexts)?;
    let mut changes = Vec::with_capacity(events.len());
    let mut contexts = Vec::new();
    for (i, r) in reports.into_iter().enumerate() {
        let AgentOutput::Changes(report) = r else {
            return Err(unexpected(Stage::Environment));
        };
        let (from, to) = windows[i];
        let delta_t = cfg.environment.delta_t.unwrap_or(to - from);
        let history = history_from_trace(trace, to - delta_t, to, gate);
        contexts.push((
            AgentContext::CausalAnalyst { report: report.clone(), history, delta_t, params: cfg.environment.clone() },
            correlation(i, AgentRole::CausalAnalyst),
        ));
        changes.push(report);
    }
    let outcomes = runner.many(Stage::Environment, contexts)?;
    changes
        .into_iter()
        .zip(outcomes)
        .map(|(changes, o)| match o {
            AgentOutput::Causes(causal) => Ok(EnvironmentResult { changes, causal }),
            _ => Err(unexpected(Stage::Environment)),
        })
        .collect()
}

/// Insights for one event. The event itself always contributes one.
pub fn derive_insights(event: &CriticalEvent, vehicle: &VehicleResult, env: &EnvironmentResult) -> Vec<Insight> {
    let t = event.t;
    let mut out = Vec::new();
    let d = &vehicle.diagnosis;
    if d.flags.contains(&VehicleFlag::LidarFault) {
        out.push(Insight {
            id: format!("lidar-fault@{t:.3}"),
            description: "LiDAR reports no objects within range while the camera does".into(),
            category: InsightCategory::Safety,
            magnitude: 1.0,
            t,
        });
    }
    if d.flags.contains(&VehicleFlag::SensorMisalignment) {
        let worst = d.discrepant_ids.iter().filter_map(|id| d.per_object_delta.get(id)).fold(0.0_f64, |a, b| a.max(*b));
        let views: Vec<&str> = d.misaligned_views.iter().map(|v| v.as_str()).collect();
        out.push(Insight {
            id: format!("misalignment@{t:.3}"),
            description: format!("camera misaligned with LiDAR ({})", views.join(", ")),
            category: InsightCategory::Maintenance,
            magnitude: worst,
            t,
        });
    }
    if d.flags.contains(&VehicleFlag::CameraFault) {
        out.push(Insight {
            id: format!("camera-fault@{t:.3}"),
            description: "camera misses most LiDAR objects".into(),
            category: InsightCategory::Maintenance,
            magnitude: 1.0,
            t,
        });
    }
    for a in &env.causal.assessments {
        let origin = match a.origin {
            Origin::SelfMoving => "self-moving",
            Origin::ExternallyInfluenced => "externally influenced",
        };
        out.push(Insight {
            id: format!("object-{}@{t:.3}", a.object_id),
            description: format!("object {} {origin}", a.object_id),
            category: if a.caution { InsightCategory::Safety } else { InsightCategory::Efficiency },
            magnitude: a.delta_over_window.norm(),
            t,
        });
    }
    out.push(Insight {
        id: format!("event@{t:.3}"),
        description: format!("{} event", event.factor),
        category: InsightCategory::Comfort,
        magnitude: event.exceedance,
        t,
    });
    out
}

fn response_stage(
    insights: &[Vec<Insight>],
    cfg: &PipelineConfig,
    runner: &mut Runner,
) -> Result<Vec<FinalResponse>, PipelineError> {
    let contexts = insights
        .iter()
        .enumerate()
        .map(|(i, ins)| {
            (
                AgentContext::ResponseAggregator { insights: ins.clone(), params: cfg.response.clone() },
                correlation(i, AgentRole::ResponseAggregator),
            )
        })
        .collect();
    runner
        .many(Stage::Response, contexts)?
        .into_iter()
        .map(|o| match o {
            AgentOutput::Response(r) => Ok(r),
            _ => Err(unexpected(Stage::Response)),
        })
        .collect()
}

fn check_inputs(trace: &SensorTrace, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    cfg.validate()?;
    if let Some(v) = validate_trace(trace).first() {
        return Err(PipelineError::validation(Stage::Trace, v.to_string()));
    }
    Ok(())
}

pub fn trace_hash(trace: &SensorTrace) -> String {
    hex::encode(Sha256::digest(serialize_trace(trace).as_bytes()))
}

/// Route assessment and critical events.
pub fn run_filter(
    trace: &SensorTrace,
    cfg: &PipelineConfig,
    backend: &Backend,
) -> Result<(RouteAssessment, Vec<CriticalEvent>), PipelineError> {
    check_inputs(trace, cfg)?;
    route_stage(trace, cfg, &mut Runner { backend, meta: RunMetadata::default() })
}

/// Vehicle reasoning at every critical event.
pub fn run_vehicle(
    trace: &SensorTrace,
    cfg: &PipelineConfig,
    backend: &Backend,
) -> Result<Vec<(CriticalEvent, VehicleResult)>, PipelineError> {
    check_inputs(trace, cfg)?;
    let mut runner = Runner { backend, meta: RunMetadata::default() };
    let (_, events) = route_stage(trace, cfg, &mut runner)?;
    Ok(events.iter().copied().zip(vehicle_stage(trace, &events, cfg, &mut runner)?).collect())
}

/// Environmental reasoning over every interval between critical events.
pub fn run_environment(
    trace: &SensorTrace,
    cfg: &PipelineConfig,
    backend: &Backend,
) -> Result<Vec<(CriticalEvent, EnvironmentResult)>, PipelineError> {
    check_inputs(trace, cfg)?;
    let mut runner = Runner { backend, meta: RunMetadata::default() };
    let (_, events) = route_stage(trace, cfg, &mut runner)?;
    Ok(events.iter().copied().zip(environment_stage(trace, &events, cfg, &mut runner)?).collect())
}

/// All four stages.
pub fn run_pipeline(trace: &SensorTrace, cfg: &PipelineConfig, backend: &Backend) -> Result<PipelineReport, PipelineError> {
    let start = Instant::now();
    check_inputs(trace, cfg)?;
    let mut runner = Runner {
        backend,
        meta: RunMetadata { config_hash: cfg.hash(), trace_hash: trace_hash(trace), ..RunMetadata::default() },
    };
    let (route, events) = route_stage(trace, cfg, &mut runner)?;
    log::info!("{} critical event(s) on route {}", events.len(), trace.meta.name);
    let vehicle = vehicle_stage(trace, &events, cfg, &mut runner)?;
    let environment = environment_stage(trace, &events, cfg, &mut runner)?;
    let insights: Vec<Vec<Insight>> =
        events.iter().zip(&vehicle).zip(&environment).map(|((e, v), en)| derive_insights(e, v, en)).collect();
    let responses = response_stage(&insights, cfg, &mut runner)?;
    let events = events
        .into_iter()
        .zip(vehicle)
        .zip(environment)
        .zip(insights)
        .zip(responses)
        .map(|((((event, vehicle), environment), insights), response)| EventReport {
            event,
            vehicle,
            environment,
            insights,
            response,
        })
        .collect();
    let mut metadata = runner.meta;
    metadata.wall_time = start.elapsed().as_secs_f64();
    Ok(PipelineReport { route, events, metadata })
}

/// Writes `report-<config>-<trace>.json`, adding `-n` rather than
/// overwriting an earlier run.
pub fn write_report(report: &PipelineReport, dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = format!("report-{}-{}", &report.metadata.config_hash[..12], &report.metadata.trace_hash[..12]);
    let json = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    let mut n = 0;
    loop {
        let name = if n == 0 { format!("{stem}.json") } else { format!("{stem}-{n}.json") };
        let path = dir.join(name);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                io::Write::write_all(&mut f, json.as_bytes())?;
                return Ok(path);
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e),
        }
    }
}

fn views(trace: &SensorTrace) -> &'static [CameraView] {
    if trace.meta.has_side_cameras {
        &[CameraView::Front, CameraView::Left, CameraView::Right]
    } else {
        &[CameraView::Front]
    }
}

/// Predicted and gold reasoning cases for one run on a synthetic trace.
///
/// Vehicle cases: one LiDAR verdict per event and one verdict per camera
/// view. Environmental cases: every object that truly moved more than
/// `sigma_sig` over an event's interval, plus every object the run
/// assessed; a missing assessment reads "unassessed", a spurious one is
/// scored against "static".
pub fn reasoning_cases(report: &PipelineReport, trace: &SensorTrace, truth: &GroundTruth, env: &EnvParams) -> (EvalFile, EvalFile) {
    let route = &trace.meta.name;
    let mut pred = EvalFile::default();
    let mut gold = EvalFile::default();
    let mut push = |id: String, task: ReasoningTask, partition: String, p: &str, g: &str| {
        pred.cases.push(Case { id: id.clone(), task, partition: partition.clone(), verdict: p.into() });
        gold.cases.push(Case { id, task, partition, verdict: g.into() });
    };
    for e in &report.events {
        let t = e.vehicle.frame_t;
        let status = truth.status_at(t);
        let d = &e.vehicle.diagnosis;
        let verdict = |b: bool, yes: &'static str| if b { yes } else { "ok" };
        push(
            format!("lidar@{t:.3}"),
            ReasoningTask::VehicleLidar,
            route.clone(),
            verdict(d.flags.contains(&VehicleFlag::LidarFault), "lidar_fault"),
            verdict(status.contains(&VehicleStatus::LidarFault), "lidar_fault"),
        );
        for v in views(trace) {
            push(
                format!("vision@{t:.3}/{v}"),
                ReasoningTask::VehicleVision,
                format!("{route}-{v}"),
                verdict(d.misaligned_views.contains(v), "misaligned"),
                verdict(status.contains(&VehicleStatus::Misaligned(*v)), "misaligned"),
            );
        }

        let (from, to) = (e.environment.changes.t_from, e.environment.changes.t_to);
        let (Some(a), Some(b)) = (truth.frame_at(from), truth.frame_at(to)) else { continue };
        let mut ids: BTreeSet<u64> = e.environment.causal.assessments.iter().map(|a| a.object_id).collect();
        for (id, p) in &b.positions {
            if a.positions.get(id).is_some_and(|q| q.distance(p) > env.sigma_sig) {
                ids.insert(*id);
            }
        }
        for id in ids {
            let moved = match (a.positions.get(&id), b.positions.get(&id)) {
                (Some(p), Some(q)) => p.distance(q) > env.sigma_sig,
                _ => false,
            };
            let g = match truth.origin_of(id) {
                Some(TruthOrigin::SelfMoving) if moved => "self-moving",
                Some(TruthOrigin::ExternallyInfluenced) if moved => "externally-influenced",
                _ => "static",
            };
            let p = match e.environment.causal.assessments.iter().find(|a| a.object_id == id) {
                Some(a) if a.origin == Origin::SelfMoving => "self-moving",
                Some(_) => "externally-influenced",
                None => "unassessed",
            };
            push(format!("env@{to:.3}/{id}"), ReasoningTask::Environmental, route.clone(), p, g);
        }
    }
    (pred, gold)
}
