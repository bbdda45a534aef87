//! The seven agent roles behind one backend contract.
//!
//! A request carries the role's typed context and the rendered instruction.
//! The deterministic backend evaluates the owning module's rules directly.
//! The remote backend posts the instruction to a chat-completion endpoint,
//! extracts the sentinel-delimited structured section and validates it; when
//! that fails after all retries, the deterministic result is used instead and
//! the failure is recorded on the response.

mod prompt;
mod remote;
pub mod stub_server;
mod structured;

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{assess_causes, detect_frame_changes, CausalOutcome, ChangeReport, EnvParams, History};
use crate::filtration::{FiltrationParams, RouteAssessment};
use crate::response::{FinalResponse, Insight, ResponseParams};
use crate::trace::{RouteMeta, SensorFrame};
use crate::vehicle::{
    describe_lidar_gated, describe_vision_gated, diagnose, Consistency, Modality, MotionDescription,
    VehicleDiagnosis, VehicleParams,
};

pub use prompt::render_prompt;
pub use remote::{RemoteClient, RemoteConfig, API_KEY_ENV};
pub use structured::{parse_structured, wrap_structured, END_SENTINEL, START_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Filtration,
    LidarDescriptor,
    VisionDescriptor,
    VehicleAnalyzer,
    EnvChangeDetector,
    CausalAnalyst,
    ResponseAggregator,
}

impl AgentRole {
    pub const ALL: [AgentRole; 7] = [
        AgentRole::Filtration,
        AgentRole::LidarDescriptor,
        AgentRole::VisionDescriptor,
        AgentRole::VehicleAnalyzer,
        AgentRole::EnvChangeDetector,
        AgentRole::CausalAnalyst,
        AgentRole::ResponseAggregator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Filtration => "filtration",
            AgentRole::LidarDescriptor => "lidar_descriptor",
            AgentRole::VisionDescriptor => "vision_descriptor",
            AgentRole::VehicleAnalyzer => "vehicle_analyzer",
            AgentRole::EnvChangeDetector => "env_change_detector",
            AgentRole::CausalAnalyst => "causal_analyst",
            AgentRole::ResponseAggregator => "response_aggregator",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Typed inputs for each role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "context")]
pub enum AgentContext {
    Filtration { meta: RouteMeta, params: FiltrationParams },
    LidarDescriptor { frame_t: SensorFrame, frame_t1: SensorFrame, gate: f64 },
    VisionDescriptor { frame_t: SensorFrame, frame_t1: SensorFrame, gate: f64 },
    VehicleAnalyzer {
        vision: MotionDescription,
        lidar: MotionDescription,
        consistency: Consistency<f64>,
        params: VehicleParams,
    },
    EnvChangeDetector { prev: SensorFrame, cur: SensorFrame, gate: f64, params: EnvParams },
    CausalAnalyst { report: ChangeReport, history: History, delta_t: f64, params: EnvParams },
    ResponseAggregator { insights: Vec<Insight>, params: ResponseParams },
}

impl AgentContext {
    pub fn role(&self) -> AgentRole {
        match self {
            AgentContext::Filtration { .. } => AgentRole::Filtration,
            AgentContext::LidarDescriptor { .. } => AgentRole::LidarDescriptor,
            AgentContext::VisionDescriptor { .. } => AgentRole::VisionDescriptor,
            AgentContext::VehicleAnalyzer { .. } => AgentRole::VehicleAnalyzer,
            AgentContext::EnvChangeDetector { .. } => AgentRole::EnvChangeDetector,
            AgentContext::CausalAnalyst { .. } => AgentRole::CausalAnalyst,
            AgentContext::ResponseAggregator { .. } => AgentRole::ResponseAggregator,
        }
    }
}

/// Typed result of one role.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentOutput {
    Route(RouteAssessment),
    Motion(MotionDescription),
    Diagnosis(VehicleDiagnosis),
    Changes(ChangeReport),
    Causes(CausalOutcome),
    Response(FinalResponse),
}

impl AgentOutput {
    pub fn to_json(&self) -> String {
        let r = match self {
            AgentOutput::Route(v) => serde_json::to_string(v),
            AgentOutput::Motion(v) => serde_json::to_string(v),
            AgentOutput::Diagnosis(v) => serde_json::to_string(v),
            AgentOutput::Changes(v) => serde_json::to_string(v),
            AgentOutput::Causes(v) => serde_json::to_string(v),
            AgentOutput::Response(v) => serde_json::to_string(v),
        };
        r.expect("domain outputs serialize")
    }

    /// Invariants that hold regardless of the request.
    pub fn validate(&self, role: AgentRole) -> Result<(), String> {
        match (role, self) {
            (AgentRole::Filtration, AgentOutput::Route(r)) => {
                if r.thresholds.is_valid() {
                    Ok(())
                } else {
                    Err("thresholds must be strictly positive".into())
                }
            }
            (AgentRole::LidarDescriptor, AgentOutput::Motion(m)) => {
                m.validate()?;
                modality(m, Modality::Lidar)
            }
            (AgentRole::VisionDescriptor, AgentOutput::Motion(m)) => {
                m.validate()?;
                modality(m, Modality::Vision)
            }
            (AgentRole::VehicleAnalyzer, AgentOutput::Diagnosis(d)) => d.validate(),
            (AgentRole::EnvChangeDetector, AgentOutput::Changes(c)) => c.validate(&EnvParams::default()),
            (AgentRole::CausalAnalyst, AgentOutput::Causes(c)) => c.assessments.iter().try_for_each(|a| a.validate()),
            (AgentRole::ResponseAggregator, AgentOutput::Response(r)) => {
                r.top_insight.validate()?;
                r.chosen_response.validate()?;
                r.secondary.iter().try_for_each(|i| i.validate())
            }
            _ => Err(format!("output type does not belong to role {role}")),
        }
    }

    /// Invariants that tie the output to the request it answers.
    pub fn validate_against(&self, context: &AgentContext) -> Result<(), String> {
        let role = context.role();
        if let (AgentContext::EnvChangeDetector { prev, cur, params, .. }, AgentOutput::Changes(c)) = (context, self) {
            same_times(c.t_from, prev.t, c.t_to, cur.t)?;
            return c.validate(params);
        }
        self.validate(role)?;
        match (context, self) {
            (AgentContext::LidarDescriptor { frame_t, frame_t1, .. }, AgentOutput::Motion(m))
            | (AgentContext::VisionDescriptor { frame_t, frame_t1, .. }, AgentOutput::Motion(m)) => {
                same_times(m.t, frame_t.t, m.t_next, frame_t1.t)
            }
            (AgentContext::VehicleAnalyzer { vision, consistency, .. }, AgentOutput::Diagnosis(d)) => {
                if d.t != vision.t {
                    return Err(format!("diagnosis time {} does not match request time {}", d.t, vision.t));
                }
                if d.gated_ids != consistency.gated {
                    return Err("gated set differs from the range gate".into());
                }
                Ok(())
            }
            (AgentContext::CausalAnalyst { report, .. }, AgentOutput::Causes(c)) => {
                let changed: std::collections::BTreeSet<_> = report.changes.iter().map(|c| c.object_id).collect();
                match c.assessments.iter().find(|a| !changed.contains(&a.object_id)) {
                    Some(a) => Err(format!("assessment for object {} that did not change", a.object_id)),
                    None => Ok(()),
                }
            }
            (AgentContext::ResponseAggregator { insights, params }, AgentOutput::Response(r)) => {
                params.check_response(r, insights)
            }
            _ => Ok(()),
        }
    }
}

fn modality(m: &MotionDescription, expected: Modality) -> Result<(), String> {
    if m.source == expected {
        Ok(())
    } else {
        Err(format!("description source {:?} does not match the role", m.source))
    }
}

fn same_times(a: f64, b: f64, c: f64, d: f64) -> Result<(), String> {
    if a == b && c == d {
        Ok(())
    } else {
        Err(format!("interval [{a}, {c}] does not match request [{b}, {d}]"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub role: AgentRole,
    pub context: AgentContext,
    pub instruction: String,
    pub correlation_id: u64,
}

impl AgentRequest {
    pub fn new(context: AgentContext, correlation_id: u64) -> Result<Self, AgentError> {
        let role = context.role();
        let instruction = render_prompt(role, &context)?;
        Ok(Self { role, context, instruction, correlation_id })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Deterministic,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    SchemaViolation,
    TransportFailure,
    CredentialMissing,
}

/// A remote failure that was absorbed by falling back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentIssue {
    pub kind: IssueKind,
    pub attempt: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub role: AgentRole,
    pub correlation_id: u64,
    pub structured: AgentOutput,
    pub raw: String,
    pub backend: BackendKind,
    /// seconds
    pub latency: f64,
    /// Remote attempts made; zero for the deterministic backend.
    pub attempts: u32,
    pub issues: Vec<AgentIssue>,
}

impl AgentResponse {
    pub fn fell_back(&self) -> bool {
        !self.issues.is_empty() && self.backend == BackendKind::Deterministic
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("{role}: context is missing `{field}`")]
    MissingContextField { role: AgentRole, field: &'static str },
    #[error("structured section not found")]
    MissingSection,
    #[error("structured section does not match the schema: {0}")]
    FieldTypeMismatch(String),
    #[error("structured output violates an invariant: {0}")]
    InvariantViolation(String),
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("credential missing: set DRIVEAGENT_API_KEY")]
    CredentialMissing,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("{role}: rule evaluation failed: {detail}")]
    Operation { role: AgentRole, detail: String },
}

/// Backend selection. The remote client carries its own retry policy.
#[derive(Debug, Clone)]
pub enum Backend {
    Deterministic,
    Remote(RemoteClient),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Deterministic => BackendKind::Deterministic,
            Backend::Remote(_) => BackendKind::Remote,
        }
    }
}

/// Evaluates the role's rule-based operation on the context.
pub fn run_deterministic(context: &AgentContext) -> Result<AgentOutput, AgentError> {
    let role = context.role();
    let op = |detail: String| AgentError::Operation { role, detail };
    Ok(match context {
        AgentContext::Filtration { meta, params } => AgentOutput::Route(RouteAssessment::for_route(meta, params)),
        AgentContext::LidarDescriptor { frame_t, frame_t1, gate } => {
            AgentOutput::Motion(describe_lidar_gated(frame_t, frame_t1, *gate))
        }
        AgentContext::VisionDescriptor { frame_t, frame_t1, gate } => {
            AgentOutput::Motion(describe_vision_gated(frame_t, frame_t1, *gate))
        }
        AgentContext::VehicleAnalyzer { vision, lidar, consistency, params } => {
            AgentOutput::Diagnosis(diagnose(vision, lidar, consistency, params).map_err(|e| op(e.to_string()))?)
        }
        AgentContext::EnvChangeDetector { prev, cur, gate, params } => {
            AgentOutput::Changes(detect_frame_changes(prev, cur, *gate, params))
        }
        AgentContext::CausalAnalyst { report, history, delta_t, params } => {
            AgentOutput::Causes(assess_causes(report, history, *delta_t, params).map_err(|e| op(e.to_string()))?)
        }
        AgentContext::ResponseAggregator { insights, params } => {
            AgentOutput::Response(params.generate_response(insights).map_err(|e| op(e.to_string()))?)
        }
    })
}

fn deterministic_response(request: &AgentRequest, start: Instant) -> Result<AgentResponse, AgentError> {
    let structured = run_deterministic(&request.context)?;
    let raw = wrap_structured(&format!("Rule evaluation for {}.", request.role), &structured);
    Ok(AgentResponse {
        role: request.role,
        correlation_id: request.correlation_id,
        structured,
        raw,
        backend: BackendKind::Deterministic,
        latency: start.elapsed().as_secs_f64(),
        attempts: 0,
        issues: Vec::new(),
    })
}

/// Runs one request. Remote failures fall back to the rules unless the
/// client has fallback disabled, in which case the last failure is returned.
pub fn invoke(backend: &Backend, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
    let start = Instant::now();
    let client = match backend {
        Backend::Deterministic => return deterministic_response(request, start),
        Backend::Remote(c) => c,
    };
    let (issues, attempts) = match client.attempt(request) {
        Ok(success) => {
            return Ok(AgentResponse {
                role: request.role,
                correlation_id: request.correlation_id,
                structured: success.output,
                raw: success.raw,
                backend: BackendKind::Remote,
                latency: start.elapsed().as_secs_f64(),
                attempts: success.attempts,
                issues: success.issues,
            })
        }
        Err(failure) => failure,
    };
    let last = issues.last().cloned().expect("a failed remote call records at least one issue");
    for issue in &issues {
        log::warn!("{} #{}: {:?} on attempt {}: {}", request.role, request.correlation_id, issue.kind, issue.attempt, issue.detail);
    }
    if !client.config.fallback {
        return Err(match last.kind {
            IssueKind::CredentialMissing => AgentError::CredentialMissing,
            IssueKind::TransportFailure => AgentError::TransportFailure(last.detail),
            IssueKind::SchemaViolation => AgentError::SchemaViolation(last.detail),
        });
    }
    let mut response = deterministic_response(request, start)?;
    response.attempts = attempts;
    response.issues = issues;
    Ok(response)
}

/// Runs independent requests with at most `max_in_flight` remote calls at a
/// time. Results come back in request order.
pub fn invoke_many(backend: &Backend, requests: &[AgentRequest]) -> Vec<Result<AgentResponse, AgentError>> {
    match backend {
        Backend::Deterministic => requests.par_iter().map(|r| invoke(backend, r)).collect(),
        Backend::Remote(client) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(client.config.max_in_flight.max(1)).build();
            match pool {
                Ok(pool) => pool.install(|| requests.par_iter().map(|r| invoke(backend, r)).collect()),
                Err(e) => {
                    log::warn!("falling back to sequential invocation: {e}");
                    requests.iter().map(|r| invoke(backend, r)).collect()
                }
            }
        }
    }
}
