//! Environmental change detection between two frames and causal assessment
//! of the changed objects.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::trace::{ObjectDetection, ObjectId, SensorFrame, SensorTrace, Source, Timestamp};
use crate::vehicle::align_camera_ids;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeKind {
    Appeared,
    Disappeared,
    Moved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentalChange {
    pub object_id: ObjectId,
    pub kind: ChangeKind,
    /// meters; zero unless moved
    pub magnitude: f64,
    pub object_class: ObjectClass,
    pub severity: Severity,
    /// Sensor whose geometry is reported.
    pub source: Source,
    /// Seen by both camera and LiDAR.
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agreement {
    pub vision_id: ObjectId,
    pub lidar_id: ObjectId,
    /// Δ_ij, meters
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeReport {
    pub t_from: Timestamp,
    pub t_to: Timestamp,
    pub changes: Vec<EnvironmentalChange>,
    pub agreements: Vec<Agreement>,
}

impl ChangeReport {
    pub fn validate(&self, params: &EnvParams) -> Result<(), String> {
        if self.t_from >= self.t_to {
            return Err("change report requires t_from < t_to".into());
        }
        for c in &self.changes {
            if !(c.magnitude.is_finite() && c.magnitude >= 0.0) {
                return Err(format!("object {}: magnitude must be non-negative", c.object_id));
            }
            if (c.magnitude > 0.0) != (c.kind == ChangeKind::Moved) {
                return Err(format!("object {}: magnitude > 0 iff moved", c.object_id));
            }
            if c.severity != params.severity(c.magnitude) {
                return Err(format!("object {}: severity does not match magnitude", c.object_id));
            }
        }
        if self.agreements.iter().any(|a| !(a.delta.is_finite() && a.delta >= 0.0)) {
            return Err("agreement distances must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    SelfMoving,
    ExternallyInfluenced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalAssessment {
    pub object_id: ObjectId,
    pub origin: Origin,
    pub confidence: f64,
    /// Needs heightened caution.
    pub caution: bool,
    pub rationale: String,
    /// ΔO over the window, meters.
    pub delta_over_window: Vec3<f64>,
}

impl CausalAssessment {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("object {}: confidence must lie in [0, 1]", self.object_id));
        }
        if self.origin == Origin::ExternallyInfluenced && !self.caution {
            return Err(format!("object {}: externally-influenced requires caution", self.object_id));
        }
        if !self.delta_over_window.is_finite() {
            return Err(format!("object {}: non-finite displacement", self.object_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvParams {
    /// m; smaller displacements are jitter
    pub move_epsilon: f64,
    /// m; ‖ΔO‖ above this is significant
    pub sigma_sig: f64,
    /// m; lower bounds of the medium and high severity bands
    pub severity_bands: [f64; 2],
    pub cosine_threshold: f64,
    /// m
    pub proximity_radius: f64,
    /// Number of sub-intervals the causal window is sampled into.
    pub sub_intervals: usize,
    /// s; `None` uses the spacing between consecutive critical timestamps.
    pub delta_t: Option<f64>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            move_epsilon: 0.1,
            sigma_sig: 0.5,
            severity_bands: [0.5, 2.0],
            cosine_threshold: 0.5,
            proximity_radius: 10.0,
            sub_intervals: 4,
            delta_t: None,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), String> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.move_epsilon) || !nonneg(self.sigma_sig) {
            return Err("environment.move_epsilon and sigma_sig must be non-negative".into());
        }
        let [m, h] = self.severity_bands;
        if !(nonneg(m) && nonneg(h) && m <= h) {
            return Err("environment.severity_bands must be ordered and non-negative".into());
        }
        if !(-1.0..=1.0).contains(&self.cosine_threshold) {
            return Err("environment.cosine_threshold must lie in [-1, 1]".into());
        }
        if !nonneg(self.proximity_radius) {
            return Err("environment.proximity_radius must be non-negative".into());
        }
        if self.sub_intervals == 0 {
            return Err("environment.sub_intervals must be at least 1".into());
        }
        if let Some(dt) = self.delta_t {
            if !(dt.is_finite() && dt > 0.0) {
                return Err("environment.delta_t must be positive".into());
            }
        }
        Ok(())
    }

    pub fn severity(&self, magnitude: f64) -> Severity {
        if magnitude >= self.severity_bands[1] {
            Severity::High
        } else if magnitude >= self.severity_bands[0] {
            Severity::Medium
        } else {
            Severity::Low
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("no history sample for object {0} inside the causal window")]
    MissingHistory(ObjectId),
    #[error("delta_t must be positive")]
    InvalidWindow,
}

/// Δ_ij = ‖v_i − ℓ_j‖, generic over the scalar type.
pub fn agreement_distance<T: Real>(vision: &Vec3<T>, lidar: &Vec3<T>) -> T {
    vision.distance(lidar)
}

/// Camera/LiDAR agreement for one matched object.
pub fn cross_sensor_agreement(vision_det: &ObjectDetection, lidar_det: &ObjectDetection) -> f64 {
    agreement_distance(&vision_det.position, &lidar_det.position)
}

fn class_of(d: &ObjectDetection) -> ObjectClass {
    if d.category.is_dynamic() {
        ObjectClass::Dynamic
    } else {
        ObjectClass::Static
    }
}

fn source_changes(
    prev: &[ObjectDetection],
    cur: &[ObjectDetection],
    params: &EnvParams,
) -> Vec<EnvironmentalChange> {
    let key = |d: &ObjectDetection| (d.object_id, d.source);
    let prev_map: BTreeMap<_, _> = prev.iter().map(|d| (key(d), d)).collect();
    let cur_map: BTreeMap<_, _> = cur.iter().map(|d| (key(d), d)).collect();
    let mut out = Vec::new();
    let change = |d: &ObjectDetection, kind, magnitude: f64| EnvironmentalChange {
        object_id: d.object_id,
        kind,
        magnitude,
        object_class: class_of(d),
        severity: params.severity(magnitude),
        source: d.source,
        confirmed: false,
    };
    for (k, p) in &prev_map {
        match cur_map.get(k) {
            None => out.push(change(p, ChangeKind::Disappeared, 0.0)),
            Some(c) => {
                let m = p.position.distance(&c.position);
                if m > params.move_epsilon {
                    out.push(change(c, ChangeKind::Moved, m));
                }
            }
        }
    }
    for (k, c) in &cur_map {
        if !prev_map.contains_key(k) {
            out.push(change(c, ChangeKind::Appeared, 0.0));
        }
    }
    out
}

/// Appeared, disappeared and moved objects between two detection snapshots.
///
/// Each sensor is compared against itself by `(object_id, source)`. A change
/// of the same kind reported by both the camera and the LiDAR is kept once,
/// with LiDAR geometry.
pub fn detect_changes(
    t_from: Timestamp,
    t_to: Timestamp,
    v_prev: &[ObjectDetection],
    v_cur: &[ObjectDetection],
    l_prev: &[ObjectDetection],
    l_cur: &[ObjectDetection],
    params: &EnvParams,
) -> ChangeReport {
    let lidar = source_changes(l_prev, l_cur, params);
    let vision = source_changes(v_prev, v_cur, params);

    let mut changes = lidar;
    let lidar_keys: BTreeSet<(ObjectId, ChangeKind)> = changes.iter().map(|c| (c.object_id, c.kind)).collect();
    let mut seen_vision = BTreeSet::new();
    let mut confirmed = BTreeSet::new();
    for c in vision {
        let k = (c.object_id, c.kind);
        if lidar_keys.contains(&k) {
            confirmed.insert(k);
        } else if seen_vision.insert(k) {
            changes.push(c);
        }
    }
    for c in &mut changes {
        if c.source == Source::Lidar && confirmed.contains(&(c.object_id, c.kind)) {
            c.confirmed = true;
        }
    }
    changes.sort_by_key(|c| (c.object_id, c.kind, c.source));

    let lidar_at: BTreeMap<ObjectId, &ObjectDetection> = l_cur.iter().map(|d| (d.object_id, d)).collect();
    let mut agreements: Vec<Agreement> = v_cur
        .iter()
        .filter_map(|v| {
            lidar_at.get(&v.object_id).map(|l| Agreement {
                vision_id: v.object_id,
                lidar_id: l.object_id,
                delta: cross_sensor_agreement(v, l),
            })
        })
        .collect();
    agreements.sort_by(|a, b| (a.vision_id, a.lidar_id).cmp(&(b.vision_id, b.lidar_id)).then(a.delta.total_cmp(&b.delta)));

    ChangeReport { t_from, t_to, changes, agreements }
}

/// Frame-level convenience: aligns camera ids onto LiDAR ids first.
pub fn detect_frame_changes(prev: &SensorFrame, cur: &SensorFrame, gate: f64, params: &EnvParams) -> ChangeReport {
    let a = align_camera_ids(prev, gate);
    let b = align_camera_ids(cur, gate);
    detect_changes(
        a.t,
        b.t,
        &a.camera_detections,
        &b.camera_detections,
        &a.lidar_detections,
        &b.lidar_detections,
        params,
    )
}

/// Time-ordered positions per object.
pub type History = BTreeMap<ObjectId, Vec<(Timestamp, Vec3<f64>)>>;

/// Object positions from every frame in `[t_from, t_to]`, LiDAR first,
/// camera only for objects the LiDAR never reports.
pub fn history_from_trace(trace: &SensorTrace, t_from: Timestamp, t_to: Timestamp, gate: f64) -> History {
    let mut lidar: History = BTreeMap::new();
    let mut camera: History = BTreeMap::new();
    let start = trace.frames.partition_point(|f| f.t < t_from);
    for frame in trace.frames[start..].iter().take_while(|f| f.t <= t_to) {
        let f = align_camera_ids(frame, gate);
        for d in &f.lidar_detections {
            lidar.entry(d.object_id).or_default().push((f.t, d.position));
        }
        let mut seen = BTreeSet::new();
        for d in &f.camera_detections {
            if seen.insert(d.object_id) {
                camera.entry(d.object_id).or_default().push((f.t, d.position));
            }
        }
    }
    for (id, samples) in camera {
        lidar.entry(id).or_insert(samples);
    }
    lidar
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalOutcome {
    pub assessments: Vec<CausalAssessment>,
    /// Changed objects without history in the window.
    pub missing_history: Vec<ObjectId>,
}

fn window_samples(samples: &[(Timestamp, Vec3<f64>)], lo: f64, hi: f64, sub_intervals: usize) -> Vec<(Timestamp, Vec3<f64>)> {
    const EPS: f64 = 1e-9;
    let inside: Vec<_> = samples.iter().copied().filter(|(t, _)| *t >= lo - EPS && *t <= hi + EPS).collect();
    if inside.len() <= 1 {
        return inside;
    }
    let mut picked: Vec<usize> = Vec::with_capacity(sub_intervals + 1);
    for k in 0..=sub_intervals {
        let target = lo + (hi - lo) * k as f64 / sub_intervals as f64;
        let mut best = 0;
        for (i, (t, _)) in inside.iter().enumerate() {
            if (t - target).abs() < (inside[best].0 - target).abs() {
                best = i;
            }
        }
        if picked.last() != Some(&best) {
            picked.push(best);
        }
    }
    picked.into_iter().map(|i| inside[i]).collect()
}

/// Causal verdicts for every changed object.
///
/// ΔO is the displacement across `[t_to − delta_t, t_to]`. Objects with
/// ‖ΔO‖ ≤ σ_sig are not assessed. A dynamic-class object whose consecutive
/// sub-interval displacements point the same way (cosine ≥ threshold for at
/// least half of the pairs, with at least two sub-intervals) is self-moving;
/// everything else, including any displaced static-class object, is
/// externally influenced. Confidence is the fraction of sub-interval pairs
/// that agree with the verdict, 0.5 when there is only one sub-interval.
pub fn assess_causes(
    report: &ChangeReport,
    history: &History,
    delta_t: f64,
    params: &EnvParams,
) -> Result<CausalOutcome, EnvError> {
    if !(delta_t.is_finite() && delta_t > 0.0) {
        return Err(EnvError::InvalidWindow);
    }
    let hi = report.t_to;
    let lo = hi - delta_t;
    let mut classes: BTreeMap<ObjectId, ObjectClass> = BTreeMap::new();
    for c in &report.changes {
        let e = classes.entry(c.object_id).or_insert(c.object_class);
        if c.source == Source::Lidar {
            *e = c.object_class;
        }
    }

    let mut out = CausalOutcome::default();
    for (&id, &class) in &classes {
        let samples = match history.get(&id) {
            Some(s) => window_samples(s, lo, hi, params.sub_intervals),
            None => Vec::new(),
        };
        if samples.is_empty() {
            log::debug!("{}", EnvError::MissingHistory(id));
            out.missing_history.push(id);
            continue;
        }
        let first = samples[0].1;
        let last = samples[samples.len() - 1].1;
        let delta = last - first;
        if delta.norm() <= params.sigma_sig {
            continue;
        }

        let subs: Vec<Vec3<f64>> = samples.windows(2).map(|w| w[1].1 - w[0].1).collect();
        let pairs: Vec<bool> = subs
            .windows(2)
            .map(|w| matches!(w[0].cosine(&w[1]), Some(c) if c >= params.cosine_threshold))
            .collect();
        let consistent = pairs.iter().filter(|p| **p).count();
        let consistent_motion = subs.len() >= 2 && 2 * consistent >= pairs.len() && consistent > 0;
        let origin = if class == ObjectClass::Dynamic && consistent_motion {
            Origin::SelfMoving
        } else {
            Origin::ExternallyInfluenced
        };
        let confidence = if pairs.is_empty() {
            0.5
        } else {
            let agree = match origin {
                Origin::SelfMoving => consistent,
                Origin::ExternallyInfluenced => pairs.len() - consistent,
            };
            agree as f64 / pairs.len() as f64
        };
        let distance = last.norm();
        let caution = match origin {
            Origin::ExternallyInfluenced => true,
            Origin::SelfMoving => distance < params.proximity_radius,
        };
        let class_name = match class {
            ObjectClass::Dynamic => "dynamic",
            ObjectClass::Static => "static",
        };
        let mut rationale = format!(
            "{class_name} object {id} moved {:.3} m over {:.3} s; {consistent} of {} sub-interval pairs directionally consistent",
            delta.norm(),
            delta_t,
            pairs.len()
        );
        match origin {
            Origin::SelfMoving => rationale.push_str("; gradual self-propelled motion"),
            Origin::ExternallyInfluenced if class == ObjectClass::Static => {
                rationale.push_str("; static object displaced by an external cause")
            }
            Origin::ExternallyInfluenced => rationale.push_str("; irregular motion suggests an external cause"),
        }
        if caution && origin == Origin::SelfMoving {
            rationale.push_str(&format!("; within {:.1} m of ego", params.proximity_radius));
        }
        out.assessments.push(CausalAssessment {
            object_id: id,
            origin,
            confidence,
            caution,
            rationale,
            delta_over_window: delta,
        });
    }
    Ok(out)
}
