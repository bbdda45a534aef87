//! Instruction templates for the seven roles.

use std::fmt::Write;

use serde::Serialize;

use super::structured::{END_SENTINEL, START_SENTINEL};
use super::{AgentContext, AgentError, AgentRole};
use crate::trace::{ObjectDetection, SensorFrame};

const GUIDELINES: &str = "\
Guidelines:
- Dynamic traffic elements: report vehicles, pedestrians and cyclists with their motion.
- Static infrastructure: report signs, traffic lights and road structures, including any change in their position.
- Keep the summary objective, concise, and free from subjective content.
";

fn task(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Filtration => {
            "You are the filtration agent. Classify the route and state the kinematic thresholds used to flag critical timestamps."
        }
        AgentRole::LidarDescriptor => {
            "You are the LiDAR descriptor. Describe how each LiDAR object moved between the two frames."
        }
        AgentRole::VisionDescriptor => {
            "You are the vision descriptor. Describe how each camera object moved between the two frames."
        }
        AgentRole::VehicleAnalyzer => {
            "You are the vehicle analyzer. Compare the LiDAR and camera descriptions and diagnose the vehicle sensors."
        }
        AgentRole::EnvChangeDetector => {
            "You are the environmental change detector. List the objects that appeared, disappeared or moved between the two frames."
        }
        AgentRole::CausalAnalyst => {
            "You are the causal analyst. For each changed object decide whether it moved by itself or was displaced by an external cause."
        }
        AgentRole::ResponseAggregator => {
            "You are the response aggregator. Pick the most urgent insight and the best response from the catalog."
        }
    }
}

fn schema(role: AgentRole) -> (&'static str, &'static str) {
    match role {
        AgentRole::Filtration => (
            "RouteAssessment",
            r#"{"category": "r1"|"r2"|"r3", "thresholds": {"angular_velocity_max": number, "linear_accel_max": number, "yaw_rate_max": number}}"#,
        ),
        AgentRole::LidarDescriptor | AgentRole::VisionDescriptor => (
            "MotionDescription",
            r#"{"t": number, "t_next": number, "source": "lidar"|"vision", "motions": [{"object_id": integer, "source": string, "position_before": [x,y,z]|null, "position_after": [x,y,z]|null, "displacement": [x,y,z], "status": "tracked"|"appeared"|"disappeared"}], "mean_displacement": [x,y,z]}"#,
        ),
        AgentRole::VehicleAnalyzer => (
            "VehicleDiagnosis",
            r#"{"t": number, "gated_ids": [integer], "per_object_delta": {"<id>": number}, "flags": ["ok"|"lidar_fault"|"camera_fault"|"sensor_misalignment"], "discrepant_ids": [integer], "misaligned_views": ["front"|"left"|"right"], "summary": string}"#,
        ),
        AgentRole::EnvChangeDetector => (
            "ChangeReport",
            r#"{"t_from": number, "t_to": number, "changes": [{"object_id": integer, "kind": "appeared"|"disappeared"|"moved", "magnitude": number, "object_class": "static"|"dynamic", "severity": "low"|"medium"|"high", "source": string, "confirmed": bool}], "agreements": [{"vision_id": integer, "lidar_id": integer, "delta": number}]}"#,
        ),
        AgentRole::CausalAnalyst => (
            "CausalOutcome",
            r#"{"assessments": [{"object_id": integer, "origin": "self-moving"|"externally-influenced", "confidence": number, "caution": bool, "rationale": string, "delta_over_window": [x,y,z]}], "missing_history": [integer]}"#,
        ),
        AgentRole::ResponseAggregator => (
            "FinalResponse",
            r#"{"top_insight": Insight, "chosen_response": {"id": string, "action": string, "intrusiveness": number, "risk_reduction": number}, "secondary": [Insight]} where Insight = {"id": string, "description": string, "category": "safety"|"maintenance"|"efficiency"|"comfort", "magnitude": number, "t": number}"#,
        ),
    }
}

fn name<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default().trim_matches('"').to_owned()
}

fn detection_line(out: &mut String, d: &ObjectDetection) {
    let p = d.position;
    let _ = writeln!(out, "- id {} {} ({}) at ({:.2}, {:.2}, {:.2}) via {}", d.object_id, d.label, d.category, p.x, p.y, p.z, d.source);
}

fn frame_block(out: &mut String, title: &str, frame: &SensorFrame, camera: bool, lidar: bool) {
    let _ = writeln!(out, "{title} (t = {:.3} s):", frame.t);
    let mut any = false;
    let dets = frame
        .camera_detections
        .iter()
        .filter(|_| camera)
        .chain(frame.lidar_detections.iter().filter(|_| lidar));
    for d in dets {
        detection_line(out, d);
        any = true;
    }
    if !any {
        out.push_str("- no detections\n");
    }
}

fn summary(context: &AgentContext, out: &mut String) -> Result<(), AgentError> {
    match context {
        AgentContext::Filtration { meta, .. } => {
            let _ = writeln!(
                out,
                "Route {}: length {:.1} m, average speed {:.2} m/s, max speed {:.2} m/s, dynamic level {}.",
                meta.name,
                meta.length,
                meta.avg_speed,
                meta.max_speed,
                name(&meta.dynamic_level)
            );
        }
        AgentContext::LidarDescriptor { frame_t, frame_t1, .. } => {
            frame_block(out, "LiDAR objects, first frame", frame_t, false, true);
            frame_block(out, "LiDAR objects, second frame", frame_t1, false, true);
        }
        AgentContext::VisionDescriptor { frame_t, frame_t1, .. } => {
            frame_block(out, "Camera objects, first frame", frame_t, true, false);
            frame_block(out, "Camera objects, second frame", frame_t1, true, false);
        }
        AgentContext::VehicleAnalyzer { vision, lidar, consistency, params } => {
            if vision.t != lidar.t {
                return Err(AgentError::MissingContextField { role: AgentRole::VehicleAnalyzer, field: "lidar.t" });
            }
            let _ = writeln!(
                out,
                "At t = {:.3} s: {} LiDAR object(s) within {} m, {} camera object(s).",
                vision.t,
                consistency.gated.len(),
                params.range_limit,
                vision.ids_before().len()
            );
            for (id, d) in &consistency.deltas {
                let _ = writeln!(out, "- object {id}: LiDAR/camera distance {d:.3} m");
            }
            let _ = writeln!(out, "Per-object discrepancy threshold: {} m.", params.tau_obj);
        }
        AgentContext::EnvChangeDetector { prev, cur, .. } => {
            frame_block(out, "Objects, earlier frame", prev, true, true);
            frame_block(out, "Objects, later frame", cur, true, true);
        }
        AgentContext::CausalAnalyst { report, delta_t, .. } => {
            let _ = writeln!(out, "Window: {:.3} s ending at t = {:.3} s.", delta_t, report.t_to);
            if report.changes.is_empty() {
                out.push_str("Change list: no changes detected.\n");
            } else {
                out.push_str("Change list:\n");
                for c in &report.changes {
                    let _ = writeln!(
                        out,
                        "- object {} ({}) {} by {:.3} m, severity {}",
                        c.object_id,
                        name(&c.object_class),
                        name(&c.kind),
                        c.magnitude,
                        name(&c.severity)
                    );
                }
            }
        }
        AgentContext::ResponseAggregator { insights, .. } => {
            if insights.is_empty() {
                return Err(AgentError::MissingContextField { role: AgentRole::ResponseAggregator, field: "insights" });
            }
            out.push_str("Insights:\n");
            for i in insights {
                let _ = writeln!(out, "- [{}] {} ({}, magnitude {:.3}, t = {:.3} s)", i.id, i.description, i.category, i.magnitude, i.t);
            }
        }
    }
    Ok(())
}

/// Expands the template for `role`. The same inputs give the same bytes.
pub fn render_prompt(role: AgentRole, context: &AgentContext) -> Result<String, AgentError> {
    if context.role() != role {
        return Err(AgentError::MissingContextField { role, field: "context" });
    }
    let mut out = String::new();
    out.push_str(task(role));
    out.push_str("\n\n");
    out.push_str(GUIDELINES);
    out.push('\n');
    summary(context, &mut out)?;
    let json = serde_json::to_string(context).expect("contexts serialize");
    let _ = write!(out, "\nContext (JSON):\n{json}\n");
    let (ty, fields) = schema(role);
    let _ = write!(
        out,
        "\nOutput schema:\nAfter your answer, emit one JSON object of type {ty} between the sentinel lines below. Unknown fields are rejected.\n{START_SENTINEL}\n{fields}\n{END_SENTINEL}\n"
    );
    Ok(out)
}
