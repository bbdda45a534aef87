//! Seeded synthetic traces with fault injection and ground-truth labels.
//!
//! Object trajectories are given directly in the ego frame, and ego motion
//! only shows up in the IMU and GPS streams. Camera and LiDAR detections are
//! exact unless a fault is active. Maneuvers are raised-cosine pulses, one
//! second wide, peaking at `intensity` times the kinematic baseline.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filtration::{Factor, ThresholdSet};
use crate::geometry::Vec3;
use crate::trace::{
    CameraView, Category, GpsSample, ImuSample, ObjectDetection, ObjectId, RouteMeta, SensorFrame, SensorTrace,
    Source, Timestamp,
};

pub const GRAVITY: f64 = 9.81;
/// Full width of a maneuver pulse, seconds.
pub const PULSE_WIDTH: f64 = 1.0;
/// Rotation axis of a turning pulse; tilted so it is not a pure yaw.
pub const TURN_AXIS: [f64; 3] = [0.6, 0.0, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Trajectory {
    Stationary,
    Linear { velocity: Vec3<f64> },
    /// (t, position) knots; linear in between, clamped outside.
    Waypoints { points: Vec<(f64, Vec3<f64>)> },
}

impl Trajectory {
    fn position(&self, initial: Vec3<f64>, t: f64) -> Vec3<f64> {
        match self {
            Trajectory::Stationary => initial,
            Trajectory::Linear { velocity } => initial + *velocity * t,
            Trajectory::Waypoints { points } => {
                let Some(first) = points.first() else { return initial };
                if t <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let ((t0, p0), (t1, p1)) = (w[0], w[1]);
                    if t <= t1 {
                        let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                        return p0 + (p1 - p0) * a;
                    }
                }
                points[points.len() - 1].1
            }
        }
    }

    fn moves(&self) -> bool {
        match self {
            Trajectory::Stationary => false,
            Trajectory::Linear { velocity } => velocity.norm() > 0.0,
            Trajectory::Waypoints { points } => points.windows(2).any(|w| w[0].1 != w[1].1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Defaults to the 1-based position in the object list.
    #[serde(default)]
    pub id: Option<ObjectId>,
    #[serde(default)]
    pub label: Option<String>,
    pub category: Category,
    pub initial_position: Vec3<f64>,
    #[serde(default = "stationary")]
    pub trajectory: Trajectory,
}

fn stationary() -> Trajectory {
    Trajectory::Stationary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FaultSpec {
    CameraMisalignment { view: CameraView, offset: Vec3<f64>, start: f64, end: f64 },
    LidarNoise { sigma: f64, start: f64, end: f64 },
    LidarDropout { start: f64, end: f64 },
    DisplacedStaticObject { object: ObjectId, offset: Vec3<f64>, at: f64 },
}

impl FaultSpec {
    fn window(&self) -> Option<(f64, f64)> {
        match *self {
            FaultSpec::CameraMisalignment { start, end, .. }
            | FaultSpec::LidarNoise { start, end, .. }
            | FaultSpec::LidarDropout { start, end } => Some((start, end)),
            FaultSpec::DisplacedStaticObject { .. } => None,
        }
    }

    fn active(&self, t: f64) -> bool {
        self.window().is_some_and(|(s, e)| t >= s && t <= e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverSpec {
    pub t: f64,
    pub factor: Factor,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub duration: f64,
    pub frame_rate: f64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    #[serde(default = "default_gps_rate")]
    pub gps_rate: f64,
    pub route_profile: RouteMeta,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub maneuvers: Vec<ManeuverSpec>,
    pub seed: u64,
}

fn default_imu_rate() -> f64 {
    400.0
}

fn default_gps_rate() -> f64 {
    10.0
}

impl ScenarioSpec {
    /// An empty scenario on the given route.
    pub fn new(route_profile: RouteMeta, duration: f64, frame_rate: f64, seed: u64) -> Self {
        Self {
            duration,
            frame_rate,
            imu_rate: default_imu_rate(),
            gps_rate: default_gps_rate(),
            route_profile,
            objects: Vec::new(),
            faults: Vec::new(),
            maneuvers: Vec::new(),
            seed,
        }
    }

    pub fn object_id(&self, index: usize) -> ObjectId {
        self.objects[index].id.unwrap_or(index as ObjectId + 1)
    }

    pub fn with_object(mut self, category: Category, initial_position: Vec3<f64>, trajectory: Trajectory) -> Self {
        self.objects.push(ObjectSpec { id: None, label: None, category, initial_position, trajectory });
        self
    }

    pub fn with_fault(mut self, fault: FaultSpec) -> Self {
        self.faults.push(fault);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "view")]
pub enum VehicleStatus {
    Ok,
    Misaligned(CameraView),
    LidarFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthOrigin {
    SelfMoving,
    ExternallyInfluenced,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLabel {
    pub t: Timestamp,
    /// `[Ok]` when no labelled fault is active.
    pub status: Vec<VehicleStatus>,
    /// True ego-frame position of every object, sensor range aside.
    pub positions: BTreeMap<ObjectId, Vec3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectLabel {
    pub object_id: ObjectId,
    pub category: Category,
    pub origin: TruthOrigin,
    /// Time of an injected displacement, if any.
    #[serde(default)]
    pub displaced_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub frames: Vec<FrameLabel>,
    pub objects: Vec<ObjectLabel>,
    pub maneuvers: Vec<ManeuverSpec>,
    /// LiDAR noise windows; noise is a robustness condition, not a labelled fault.
    pub noise_windows: Vec<(f64, f64)>,
}

impl GroundTruth {
    /// Label of the frame nearest to `t`.
    pub fn status_at(&self, t: f64) -> &[VehicleStatus] {
        self.frame_at(t).map(|f| f.status.as_slice()).unwrap_or(&[])
    }

    /// Frame label nearest to `t`.
    pub fn frame_at(&self, t: f64) -> Option<&FrameLabel> {
        let i = self.frames.partition_point(|f| f.t < t);
        let pick = if i == 0 {
            0
        } else if i >= self.frames.len() || (t - self.frames[i - 1].t) <= (self.frames[i].t - t) {
            i - 1
        } else {
            i
        };
        self.frames.get(pick)
    }

    pub fn origin_of(&self, id: ObjectId) -> Option<TruthOrigin> {
        self.objects.iter().find(|o| o.object_id == id).map(|o| o.origin)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("maneuver time {t} outside [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.duration) {
            return Err(invalid("duration must be positive"));
        }
        if !pos(self.frame_rate) || !pos(self.imu_rate) || !pos(self.gps_rate) {
            return Err(invalid("rates must be positive"));
        }
        let meta_errs = crate::trace::meta_violations(&self.route_profile);
        if let Some(v) = meta_errs.first() {
            return Err(invalid(v.to_string()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            let id = self.object_id(i);
            if !ids.insert(id) {
                return Err(invalid(format!("duplicate object id {id}")));
            }
            if !o.initial_position.is_finite() {
                return Err(invalid(format!("object {id}: non-finite position")));
            }
            if !o.category.is_dynamic() && o.trajectory.moves() {
                return Err(invalid(format!("object {id}: {} objects must be stationary", o.category)));
            }
        }
        for f in &self.faults {
            if let Some((s, e)) = f.window() {
                if !(s.is_finite() && e.is_finite() && s < e) {
                    return Err(invalid("fault windows need start < end"));
                }
            }
            match f {
                FaultSpec::LidarNoise { sigma, .. } if !(sigma.is_finite() && *sigma >= 0.0) => {
                    return Err(invalid("noise sigma must be non-negative"));
                }
                FaultSpec::CameraMisalignment { offset, .. } if !offset.is_finite() => {
                    return Err(invalid("misalignment offset must be finite"));
                }
                FaultSpec::DisplacedStaticObject { object, offset, at } => {
                    let idx = (0..self.objects.len())
                        .find(|i| self.object_id(*i) == *object)
                        .ok_or_else(|| invalid(format!("displaced object {object} not in scenario")))?;
                    if self.objects[idx].category.is_dynamic() || self.objects[idx].trajectory.moves() {
                        return Err(invalid(format!("displaced object {object} must be a stationary static object")));
                    }
                    if !(offset.is_finite() && at.is_finite()) {
                        return Err(invalid("displacement must be finite"));
                    }
                }
                _ => {}
            }
        }
        for m in &self.maneuvers {
            if !(m.intensity.is_finite() && m.intensity > 0.0) {
                return Err(invalid("maneuver intensity must be positive"));
            }
            if !(0.0..=self.duration).contains(&m.t) {
                return Err(SynthError::OutOfRange { t: m.t, duration: self.duration });
            }
        }
        Ok(())
    }
}

/// Adds a maneuver pulse at `t`.
pub fn inject_maneuver(spec: &ScenarioSpec, t: f64, factor: Factor, intensity: f64) -> Result<ScenarioSpec, SynthError> {
    if !(t.is_finite() && (0.0..=spec.duration).contains(&t)) {
        return Err(SynthError::OutOfRange { t, duration: spec.duration });
    }
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(invalid("maneuver intensity must be positive"));
    }
    let mut out = spec.clone();
    out.maneuvers.push(ManeuverSpec { t, factor, intensity });
    out.maneuvers.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(out)
}

/// Raised-cosine envelope in [0, 1], peaking at `center`.
pub fn pulse_envelope(t: f64, center: f64) -> f64 {
    let tau = t - center;
    if tau.abs() > PULSE_WIDTH / 2.0 {
        0.0
    } else {
        0.5 * (1.0 + (2.0 * PI * tau / PULSE_WIDTH).cos())
    }
}

fn imu_at(t: f64, maneuvers: &[ManeuverSpec], baseline: &ThresholdSet<f64>) -> ImuSample {
    let mut w = Vec3::zero();
    let mut a = Vec3::new(0.0, 0.0, GRAVITY);
    for m in maneuvers {
        let env = pulse_envelope(t, m.t);
        if env == 0.0 {
            continue;
        }
        let peak = m.intensity * baseline.get(m.factor) * env;
        match m.factor {
            Factor::Turning => w += Vec3::from(TURN_AXIS) * peak,
            Factor::AccelBrake => a += Vec3::new(peak, 0.0, 0.0),
            Factor::OrientationChange => w += Vec3::new(0.0, 0.0, peak),
        }
    }
    ImuSample { t, angular_velocity: w, linear_acceleration: a, yaw_rate: w.z }
}

/// Camera view that sees a point, by bearing. Without side cameras only the
/// front sector is covered.
pub fn view_for(position: &Vec3<f64>, has_side_cameras: bool) -> Option<CameraView> {
    let bearing = position.y.atan2(position.x).to_degrees();
    if bearing.abs() <= 45.0 {
        Some(CameraView::Front)
    } else if !has_side_cameras {
        None
    } else if (45.0..=135.0).contains(&bearing) {
        Some(CameraView::Left)
    } else if (-135.0..=-45.0).contains(&bearing) {
        Some(CameraView::Right)
    } else {
        None
    }
}

/// Max distance at which either sensor reports an object, meters.
pub const SENSOR_RANGE: f64 = 150.0;

fn samples(duration: f64, rate: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    (0..=n).map(move |i| i as f64 / rate)
}

/// Generates the trace and its labels. Same spec, same output.
pub fn generate_trace(spec: &ScenarioSpec) -> Result<(SensorTrace, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let baseline = ThresholdSet::<f64>::baseline();
    let meta = spec.route_profile.clone();

    let imu = samples(spec.duration, spec.imu_rate).map(|t| imu_at(t, &spec.maneuvers, &baseline)).collect();

    let speed = meta.avg_speed.min(meta.max_speed);
    let gps = samples(spec.duration, spec.gps_rate)
        .map(|t| GpsSample {
            t,
            latitude: 40.0 + speed * t / 111_320.0,
            longitude: -83.0,
            altitude: 220.0,
            speed,
        })
        .collect();

    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for t in samples(spec.duration, spec.frame_rate) {
        let dropout = spec.faults.iter().any(|f| matches!(f, FaultSpec::LidarDropout { .. }) && f.active(t));
        let noise: Vec<f64> = spec
            .faults
            .iter()
            .filter_map(|f| match f {
                FaultSpec::LidarNoise { sigma, .. } if f.active(t) => Some(*sigma),
                _ => None,
            })
            .collect();
        let sigma = noise.iter().map(|s| s * s).sum::<f64>().sqrt();

        let mut camera = Vec::new();
        let mut lidar = Vec::new();
        let mut positions = BTreeMap::new();
        for (i, o) in spec.objects.iter().enumerate() {
            let id = spec.object_id(i);
            let mut p = o.trajectory.position(o.initial_position, t);
            for f in &spec.faults {
                if let FaultSpec::DisplacedStaticObject { object, offset, at } = f {
                    if *object == id && t >= *at {
                        p += *offset;
                    }
                }
            }
            positions.insert(id, p);
            if p.norm() > SENSOR_RANGE {
                continue;
            }
            let label = o.label.clone().unwrap_or_else(|| o.category.as_str().to_owned());
            if !dropout {
                let mut lp = p;
                if sigma > 0.0 {
                    let n = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
                    lp += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
                }
                lidar.push(ObjectDetection {
                    object_id: id,
                    label: label.clone(),
                    category: o.category,
                    position: lp,
                    source: Source::Lidar,
                    confidence: 0.9,
                });
            }
            if let Some(view) = view_for(&p, meta.has_side_cameras) {
                let mut cp = p;
                for f in &spec.faults {
                    if let FaultSpec::CameraMisalignment { view: v, offset, .. } = f {
                        if *v == view && f.active(t) {
                            cp += *offset;
                        }
                    }
                }
                camera.push(ObjectDetection {
                    object_id: id,
                    label,
                    category: o.category,
                    position: cp,
                    source: Source::camera(view),
                    confidence: 0.9,
                });
            }
        }
        frames.push(SensorFrame { t, camera_detections: camera, lidar_detections: lidar });

        let mut status: Vec<VehicleStatus> = spec
            .faults
            .iter()
            .filter(|f| f.active(t))
            .filter_map(|f| match f {
                FaultSpec::CameraMisalignment { view, .. } => Some(VehicleStatus::Misaligned(*view)),
                FaultSpec::LidarDropout { .. } => Some(VehicleStatus::LidarFault),
                _ => None,
            })
            .collect();
        status.sort();
        status.dedup();
        if status.is_empty() {
            status.push(VehicleStatus::Ok);
        }
        labels.push(FrameLabel { t, status, positions });
    }

    let objects = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let id = spec.object_id(i);
            let displaced_at = spec.faults.iter().find_map(|f| match f {
                FaultSpec::DisplacedStaticObject { object, at, .. } if *object == id => Some(*at),
                _ => None,
            });
            let origin = if displaced_at.is_some() {
                TruthOrigin::ExternallyInfluenced
            } else if o.trajectory.moves() {
                TruthOrigin::SelfMoving
            } else {
                TruthOrigin::Static
            };
            ObjectLabel { object_id: id, category: o.category, origin, displaced_at }
        })
        .collect();

    let mut maneuvers = spec.maneuvers.clone();
    maneuvers.sort_by(|a, b| a.t.total_cmp(&b.t));
    let noise_windows = spec
        .faults
        .iter()
        .filter_map(|f| match f {
            FaultSpec::LidarNoise { start, end, .. } => Some((*start, *end)),
            _ => None,
        })
        .collect();

    Ok((
        SensorTrace { meta, imu, gps, frames },
        GroundTruth { frames: labels, objects, maneuvers, noise_windows },
    ))
}
