//! Vehicle-level reasoning: per-sensor motion descriptions, LiDAR range
//! gating, LiDAR/camera consistency and the resulting sensor diagnosis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::matching::{correspond, CORRESPONDENCE_GATE};
use crate::scalar::Real;
use crate::trace::{CameraView, ObjectDetection, ObjectId, SensorFrame, Source, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionStatus {
    Tracked,
    Appeared,
    Disappeared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectMotion {
    pub object_id: ObjectId,
    /// Sensor that produced the detection (at `t` when present, else at `t_next`).
    pub source: Source,
    pub position_before: Option<Vec3<f64>>,
    pub position_after: Option<Vec3<f64>>,
    /// `position_after - position_before` when tracked, zero otherwise.
    pub displacement: Vec3<f64>,
    pub status: MotionStatus,
}

impl ObjectMotion {
    /// Present at the first of the two frames.
    pub fn seen_before(&self) -> bool {
        self.position_before.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionDescription {
    pub t: Timestamp,
    pub t_next: Timestamp,
    pub source: Modality,
    pub motions: Vec<ObjectMotion>,
    pub mean_displacement: Vec3<f64>,
}

impl MotionDescription {
    pub fn ids_before(&self) -> BTreeSet<ObjectId> {
        self.motions.iter().filter(|m| m.seen_before()).map(|m| m.object_id).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.t >= self.t_next {
            return Err("description requires t < t_next".into());
        }
        for m in &self.motions {
            let ok = match m.status {
                MotionStatus::Tracked => match (m.position_before, m.position_after) {
                    (Some(b), Some(a)) => a - b == m.displacement,
                    _ => false,
                },
                MotionStatus::Appeared => m.position_before.is_none() && m.position_after.is_some(),
                MotionStatus::Disappeared => m.position_before.is_some() && m.position_after.is_none(),
            };
            if !ok {
                return Err(format!("object {} motion inconsistent with status", m.object_id));
            }
        }
        let mean = Vec3::mean(
            self.motions.iter().filter(|m| m.status == MotionStatus::Tracked).map(|m| m.displacement),
        );
        if mean.distance(&self.mean_displacement) > 1e-9 {
            return Err("mean_displacement is not the mean of tracked displacements".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleFlag {
    Ok,
    LidarFault,
    CameraFault,
    SensorMisalignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleDiagnosis {
    pub t: Timestamp,
    /// Ω: LiDAR objects within range.
    pub gated_ids: BTreeSet<ObjectId>,
    /// Δ per object, meters.
    pub per_object_delta: BTreeMap<ObjectId, f64>,
    pub flags: BTreeSet<VehicleFlag>,
    /// Objects whose Δ exceeds the per-object threshold.
    pub discrepant_ids: Vec<ObjectId>,
    /// Camera views in which a majority of matched objects are discrepant.
    pub misaligned_views: Vec<CameraView>,
    pub summary: String,
}

impl VehicleDiagnosis {
    pub fn is_ok(&self) -> bool {
        self.flags.contains(&VehicleFlag::Ok)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.flags.is_empty() {
            return Err("flags must be non-empty".into());
        }
        if self.flags.contains(&VehicleFlag::Ok) && self.flags.len() > 1 {
            return Err("ok is exclusive with fault flags".into());
        }
        for (id, d) in &self.per_object_delta {
            if !self.gated_ids.contains(id) {
                return Err(format!("delta for object {id} outside the gated set"));
            }
            if !(d.is_finite() && *d >= 0.0) {
                return Err(format!("delta for object {id} must be finite and non-negative"));
            }
        }
        if !self.misaligned_views.is_empty() && !self.flags.contains(&VehicleFlag::SensorMisalignment) {
            return Err("misaligned views listed without sensor_misalignment flag".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// m
    pub range_limit: f64,
    /// m
    pub tau_obj: f64,
    pub majority_fraction: f64,
    pub expected_min_objects: usize,
    /// m
    pub correspondence_gate: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            range_limit: 100.0,
            tau_obj: 2.0,
            majority_fraction: 0.5,
            expected_min_objects: 1,
            correspondence_gate: CORRESPONDENCE_GATE,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.range_limit) {
            return Err("vehicle.range_limit must be positive".into());
        }
        if !pos(self.tau_obj) {
            return Err("vehicle.tau_obj must be positive".into());
        }
        if !(self.majority_fraction > 0.0 && self.majority_fraction <= 1.0) {
            return Err("vehicle.majority_fraction must be in (0, 1]".into());
        }
        if !pos(self.correspondence_gate) {
            return Err("vehicle.correspondence_gate must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum VehicleError {
    #[error("vision description at t={vision} does not match lidar description at t={lidar}")]
    TimestampMismatch { vision: Timestamp, lidar: Timestamp },
}

fn describe(
    prev: &[ObjectDetection],
    next: &[ObjectDetection],
    t: Timestamp,
    t_next: Timestamp,
    modality: Modality,
    gate: f64,
) -> MotionDescription {
    let c = correspond(prev, next, gate, modality == Modality::Lidar);
    let mut motions = Vec::with_capacity(c.pairs.len() + c.left_only.len() + c.right_only.len());
    for p in &c.pairs {
        let (b, a) = (&prev[p.left], &next[p.right]);
        motions.push(ObjectMotion {
            object_id: b.object_id,
            source: b.source,
            position_before: Some(b.position),
            position_after: Some(a.position),
            displacement: a.position - b.position,
            status: MotionStatus::Tracked,
        });
    }
    for &i in &c.left_only {
        let b = &prev[i];
        motions.push(ObjectMotion {
            object_id: b.object_id,
            source: b.source,
            position_before: Some(b.position),
            position_after: None,
            displacement: Vec3::zero(),
            status: MotionStatus::Disappeared,
        });
    }
    for &i in &c.right_only {
        let a = &next[i];
        motions.push(ObjectMotion {
            object_id: a.object_id,
            source: a.source,
            position_before: None,
            position_after: Some(a.position),
            displacement: Vec3::zero(),
            status: MotionStatus::Appeared,
        });
    }
    motions.sort_by(|a, b| {
        (a.object_id, a.source, a.position_before.is_none()).cmp(&(b.object_id, b.source, b.position_before.is_none()))
    });
    let mean_displacement = Vec3::mean(
        motions.iter().filter(|m| m.status == MotionStatus::Tracked).map(|m| m.displacement),
    );
    MotionDescription { t, t_next, source: modality, motions, mean_displacement }
}

/// Camera motion between two frames. Objects are paired by id; colliding ids
/// are resolved by nearest neighbour within the default gate.
pub fn describe_vision(frame_t: &SensorFrame, frame_t1: &SensorFrame) -> MotionDescription {
    describe(
        &frame_t.camera_detections,
        &frame_t1.camera_detections,
        frame_t.t,
        frame_t1.t,
        Modality::Vision,
        CORRESPONDENCE_GATE,
    )
}

/// Camera motion with an explicit gate for colliding ids.
pub fn describe_vision_gated(frame_t: &SensorFrame, frame_t1: &SensorFrame, gate: f64) -> MotionDescription {
    describe(&frame_t.camera_detections, &frame_t1.camera_detections, frame_t.t, frame_t1.t, Modality::Vision, gate)
}

/// LiDAR motion between two frames. Id pairs farther apart than the gate are
/// treated as one disappearance plus one appearance.
pub fn describe_lidar(frame_t: &SensorFrame, frame_t1: &SensorFrame) -> MotionDescription {
    describe_lidar_gated(frame_t, frame_t1, CORRESPONDENCE_GATE)
}

pub fn describe_lidar_gated(frame_t: &SensorFrame, frame_t1: &SensorFrame, gate: f64) -> MotionDescription {
    describe(
        &frame_t.lidar_detections,
        &frame_t1.lidar_detections,
        frame_t.t,
        frame_t1.t,
        Modality::Lidar,
        gate,
    )
}

/// True when `position` lies within `range_limit` (inclusive) of the ego origin.
pub fn within_range<T: Real>(position: &Vec3<T>, range_limit: T) -> bool {
    position.norm() <= range_limit
}

/// Ω: ids of LiDAR detections within `range_limit`.
pub fn gate_range(lidar_detections: &[ObjectDetection], range_limit: f64) -> BTreeSet<ObjectId> {
    lidar_detections
        .iter()
        .filter(|d| within_range(&d.position, range_limit))
        .map(|d| d.object_id)
        .collect()
}

/// Per-object LiDAR/camera discrepancy over the gated set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Consistency<T = f64> {
    pub gated: BTreeSet<ObjectId>,
    pub deltas: BTreeMap<ObjectId, T>,
    /// Gated ids missing from one of the position maps.
    pub skipped: Vec<ObjectId>,
}

/// Δ_i = ‖L_i − C_i‖ for every gated id present in both maps.
pub fn cross_sensor_consistency<T: Real>(
    gated: &BTreeSet<ObjectId>,
    lidar_pos: &BTreeMap<ObjectId, Vec3<T>>,
    camera_pos: &BTreeMap<ObjectId, Vec3<T>>,
) -> Consistency<T> {
    let mut deltas = BTreeMap::new();
    let mut skipped = Vec::new();
    for id in gated {
        match (lidar_pos.get(id), camera_pos.get(id)) {
            (Some(l), Some(c)) => {
                deltas.insert(*id, l.distance(c));
            }
            _ => skipped.push(*id),
        }
    }
    Consistency { gated: gated.clone(), deltas, skipped }
}

/// Rewrites camera object ids onto the ids of their LiDAR counterparts.
///
/// Camera detections without a LiDAR counterpart keep their own id. A camera
/// id that collides with an unrelated LiDAR id is offset above the largest id
/// in the frame so it cannot be mistaken for that object.
pub fn align_camera_ids(frame: &SensorFrame, gate: f64) -> SensorFrame {
    let c = correspond(&frame.camera_detections, &frame.lidar_detections, gate, false);
    let mut out = frame.clone();
    let lidar_ids: BTreeSet<ObjectId> = frame.lidar_detections.iter().map(|d| d.object_id).collect();
    let max_id = frame.detections().map(|d| d.object_id).max().unwrap_or(0);
    for p in &c.pairs {
        out.camera_detections[p.left].object_id = frame.lidar_detections[p.right].object_id;
    }
    for &i in &c.left_only {
        let id = frame.camera_detections[i].object_id;
        if lidar_ids.contains(&id) {
            out.camera_detections[i].object_id = max_id + 1 + i as ObjectId;
        }
    }
    out
}

/// Everything the analyzer needs at one timestamp, computed from a frame pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleEvidence {
    pub vision: MotionDescription,
    pub lidar: MotionDescription,
    pub consistency: Consistency<f64>,
}

/// Runs both descriptors, the range gate and the consistency check.
pub fn gather_evidence(frame_t: &SensorFrame, frame_t1: &SensorFrame, params: &VehicleParams) -> VehicleEvidence {
    let a = align_camera_ids(frame_t, params.correspondence_gate);
    let b = align_camera_ids(frame_t1, params.correspondence_gate);
    let vision = describe_vision_gated(&a, &b, params.correspondence_gate);
    let lidar = describe_lidar_gated(&a, &b, params.correspondence_gate);
    let gated = gate_range(&a.lidar_detections, params.range_limit);
    let lidar_pos = a.lidar_detections.iter().map(|d| (d.object_id, d.position)).collect();
    let camera_pos = a.camera_detections.iter().map(|d| (d.object_id, d.position)).collect();
    let consistency = cross_sensor_consistency(&gated, &lidar_pos, &camera_pos);
    VehicleEvidence { vision, lidar, consistency }
}

/// Rule-based sensor diagnosis.
///
/// * lidar_fault: Ω empty while the camera sees at least
///   `expected_min_objects` objects.
/// * per-object discrepancy: Δ > τ_obj (reported, not flagged on its own).
/// * sensor_misalignment: at least `majority_fraction` of matched objects are
///   discrepant, evaluated per camera view; the views are listed.
/// * camera_fault: Ω non-empty and at least `majority_fraction` of camera
///   objects have no LiDAR counterpart.
/// * ok: none of the above.
pub fn diagnose(
    vision: &MotionDescription,
    lidar: &MotionDescription,
    consistency: &Consistency<f64>,
    params: &VehicleParams,
) -> Result<VehicleDiagnosis, VehicleError> {
    if vision.t != lidar.t {
        return Err(VehicleError::TimestampMismatch { vision: vision.t, lidar: lidar.t });
    }
    let camera_ids = vision.ids_before();
    let lidar_ids = lidar.ids_before();
    let mut flags = BTreeSet::new();
    let mut summary = String::new();

    if consistency.gated.is_empty() && camera_ids.len() >= params.expected_min_objects {
        flags.insert(VehicleFlag::LidarFault);
        let _ = write!(
            summary,
            "lidar_fault: no LiDAR objects within {} m while camera reports {} object(s). ",
            params.range_limit,
            camera_ids.len()
        );
    }

    let discrepant_ids: Vec<ObjectId> = consistency
        .deltas
        .iter()
        .filter(|(_, d)| **d > params.tau_obj)
        .map(|(id, _)| *id)
        .collect();
    for id in &discrepant_ids {
        let _ = write!(
            summary,
            "discrepancy: object {id} differs by {:.3} m between LiDAR and camera. ",
            consistency.deltas[id]
        );
    }

    let view_of: BTreeMap<ObjectId, CameraView> = vision
        .motions
        .iter()
        .filter(|m| m.seen_before())
        .filter_map(|m| m.source.camera_view().map(|v| (m.object_id, v)))
        .collect();
    let mut per_view: BTreeMap<CameraView, (usize, usize)> = BTreeMap::new();
    for (id, d) in &consistency.deltas {
        if let Some(view) = view_of.get(id) {
            let e = per_view.entry(*view).or_default();
            e.1 += 1;
            if *d > params.tau_obj {
                e.0 += 1;
            }
        }
    }
    let misaligned_views: Vec<CameraView> = per_view
        .iter()
        .filter(|(_, (bad, total))| *total > 0 && (*bad as f64) >= params.majority_fraction * (*total as f64))
        .map(|(v, _)| *v)
        .collect();
    if !misaligned_views.is_empty() {
        flags.insert(VehicleFlag::SensorMisalignment);
        for v in &misaligned_views {
            let (bad, total) = per_view[v];
            let _ = write!(
                summary,
                "sensor_misalignment: {bad} of {total} matched objects in the {v} view exceed {} m. ",
                params.tau_obj
            );
        }
    }

    let unmatched = camera_ids.difference(&lidar_ids).count();
    if !consistency.gated.is_empty()
        && !camera_ids.is_empty()
        && (unmatched as f64) >= params.majority_fraction * (camera_ids.len() as f64)
    {
        flags.insert(VehicleFlag::CameraFault);
        let _ = write!(
            summary,
            "camera_fault: {unmatched} of {} camera objects have no LiDAR counterpart. ",
            camera_ids.len()
        );
    }

    if flags.is_empty() {
        flags.insert(VehicleFlag::Ok);
        let _ = write!(
            summary,
            "ok: {} gated object(s), {} cross-checked, max discrepancy {:.3} m.",
            consistency.gated.len(),
            consistency.deltas.len(),
            consistency.deltas.values().copied().fold(0.0, f64::max)
        );
    }

    Ok(VehicleDiagnosis {
        t: vision.t,
        gated_ids: consistency.gated.clone(),
        per_object_delta: consistency.deltas.clone(),
        flags,
        discrepant_ids,
        misaligned_views,
        summary: summary.trim_end().to_owned(),
    })
}
