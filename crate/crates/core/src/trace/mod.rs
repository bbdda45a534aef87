//! Synchronized multimodal sensor traces: IMU, GPS and per-frame object
//! detections from the camera views and the LiDAR, plus route metadata.
//!
//! A [`SensorTrace`] is immutable once parsed. Every stream is strictly
//! increasing in time and all positions share the ego frame.

mod format;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use format::{parse_trace, parse_trace_str, serialize_trace, write_trace};

/// Seconds since trace start.
pub type Timestamp = f64;
pub type ObjectId = u64;

/// Tolerance between `yaw_rate` and the vertical component of angular velocity.
pub const YAW_CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSample {
    pub t: Timestamp,
    /// deg/s
    pub angular_velocity: Vec3<f64>,
    /// m/s², gravity included
    pub linear_acceleration: Vec3<f64>,
    /// deg/s about the vertical axis
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsSample {
    pub t: Timestamp,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub speed: f64,
}

/// The seven object categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    FourWheelVehicle,
    NonFourWheelVehicle,
    Pedestrian,
    Sign,
    FixedInstallation,
    Plant,
    Monitor,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::FourWheelVehicle,
        Category::NonFourWheelVehicle,
        Category::Pedestrian,
        Category::Sign,
        Category::FixedInstallation,
        Category::Plant,
        Category::Monitor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::FourWheelVehicle => "four-wheel-vehicle",
            Category::NonFourWheelVehicle => "non-four-wheel-vehicle",
            Category::Pedestrian => "pedestrian",
            Category::Sign => "sign",
            Category::FixedInstallation => "fixed-installation",
            Category::Plant => "plant",
            Category::Monitor => "monitor",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Vehicles and pedestrians can move under their own agency.
    pub fn is_dynamic(self) -> bool {
        matches!(
            self,
            Category::FourWheelVehicle | Category::NonFourWheelVehicle | Category::Pedestrian
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraView {
    Front,
    Left,
    Right,
}

impl CameraView {
    pub fn as_str(self) -> &'static str {
        match self {
            CameraView::Front => "front",
            CameraView::Left => "left",
            CameraView::Right => "right",
        }
    }
}

impl fmt::Display for CameraView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    CameraFront,
    CameraLeft,
    CameraRight,
    Lidar,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::CameraFront => "camera-front",
            Source::CameraLeft => "camera-left",
            Source::CameraRight => "camera-right",
            Source::Lidar => "lidar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Source::CameraFront, Source::CameraLeft, Source::CameraRight, Source::Lidar]
            .into_iter()
            .find(|v| v.as_str() == s)
    }

    pub fn camera(view: CameraView) -> Self {
        match view {
            CameraView::Front => Source::CameraFront,
            CameraView::Left => Source::CameraLeft,
            CameraView::Right => Source::CameraRight,
        }
    }

    pub fn camera_view(self) -> Option<CameraView> {
        match self {
            Source::CameraFront => Some(CameraView::Front),
            Source::CameraLeft => Some(CameraView::Left),
            Source::CameraRight => Some(CameraView::Right),
            Source::Lidar => None,
        }
    }

    pub fn is_camera(self) -> bool {
        self != Source::Lidar
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDetection {
    pub object_id: ObjectId,
    pub label: String,
    pub category: Category,
    /// Ego frame, meters.
    pub position: Vec3<f64>,
    pub source: Source,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorFrame {
    pub t: Timestamp,
    pub camera_detections: Vec<ObjectDetection>,
    pub lidar_detections: Vec<ObjectDetection>,
}

impl SensorFrame {
    pub fn detections(&self) -> impl Iterator<Item = &ObjectDetection> {
        self.camera_detections.iter().chain(self.lidar_detections.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicLevel {
    Small,
    Medium,
    Large,
}

impl DynamicLevel {
    /// Ordinal urban-complexity indicator: small 0, medium 1, large 2.
    pub fn complexity(self) -> u8 {
        match self {
            DynamicLevel::Small => 0,
            DynamicLevel::Medium => 1,
            DynamicLevel::Large => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteMeta {
    pub name: String,
    /// meters
    pub length: f64,
    /// m/s
    pub max_speed: f64,
    /// m/s
    pub avg_speed: f64,
    pub dynamic_level: DynamicLevel,
    pub has_side_cameras: bool,
    pub has_roadside_obstructions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorTrace {
    pub meta: RouteMeta,
    pub imu: Vec<ImuSample>,
    pub gps: Vec<GpsSample>,
    pub frames: Vec<SensorFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Meta,
    Imu,
    Gps,
    Frames,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Meta => "meta",
            Stream::Imu => "imu",
            Stream::Gps => "gps",
            Stream::Frames => "frames",
        })
    }
}

/// One broken invariant, located by stream and element index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub stream: Stream,
    pub index: usize,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum Rule {
    RouteMeta { detail: String },
    NonMonotonicTimestamp,
    NonFinite { field: String },
    OutOfRange { field: String },
    YawMismatch,
    DuplicateDetection { object_id: ObjectId, source: Source },
    WrongSourceList { object_id: ObjectId, source: Source },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]: ", self.stream, self.index)?;
        match &self.rule {
            Rule::RouteMeta { detail } => write!(f, "RouteMeta rule violated: {detail}"),
            Rule::NonMonotonicTimestamp => write!(f, "timestamps must be strictly increasing"),
            Rule::NonFinite { field } => write!(f, "{field} must be finite"),
            Rule::OutOfRange { field } => write!(f, "{field} out of range"),
            Rule::YawMismatch => write!(f, "yaw_rate differs from angular_velocity.z"),
            Rule::DuplicateDetection { object_id, source } => {
                write!(f, "DuplicateDetection: object {object_id} from {source} appears twice")
            }
            Rule::WrongSourceList { object_id, source } => {
                write!(f, "object {object_id} with source {source} is in the wrong detection list")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },
    #[error("non-monotonic timestamp in {stream} stream at index {index}")]
    NonMonotonicTimestamp { stream: Stream, index: usize },
    #[error("unknown object category {0:?}")]
    UnknownCategory(String),
    #[error("duplicate detection in frame t={t}: object {object_id} from {sensor}")]
    DuplicateDetection { t: Timestamp, object_id: ObjectId, sensor: Source },
    #[error("invariant violated at line {line}: {violation}")]
    Invariant { line: usize, violation: Violation },
    #[error("trace has no frames")]
    NoFrames,
    #[error("no frame within {window} s of t={t} (nearest at distance {distance})")]
    NoFrameInWindow { t: Timestamp, window: f64, distance: f64 },
    #[error("io error: {0}")]
    Io(String),
}

fn check_finite(v: f64, field: &str, stream: Stream, index: usize, out: &mut Vec<Violation>) {
    if !v.is_finite() {
        out.push(Violation { stream, index, rule: Rule::NonFinite { field: field.into() } });
    }
}

fn check_vec(v: &Vec3<f64>, field: &str, stream: Stream, index: usize, out: &mut Vec<Violation>) {
    if !v.is_finite() {
        out.push(Violation { stream, index, rule: Rule::NonFinite { field: field.into() } });
    }
}

pub(crate) fn meta_violations(meta: &RouteMeta) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |detail: &str| {
        out.push(Violation {
            stream: Stream::Meta,
            index: 0,
            rule: Rule::RouteMeta { detail: detail.into() },
        })
    };
    if !(meta.length > 0.0 && meta.length.is_finite()) {
        push("length must be positive");
    }
    if !(meta.max_speed.is_finite() && meta.avg_speed.is_finite()) {
        push("speeds must be finite");
    }
    if meta.avg_speed < 0.0 {
        push("avg_speed must be non-negative");
    }
    if meta.avg_speed > meta.max_speed {
        push("avg_speed must not exceed max_speed");
    }
    out
}

pub(crate) fn imu_violations(i: usize, s: &ImuSample, out: &mut Vec<Violation>) {
    let st = Stream::Imu;
    check_finite(s.t, "t", st, i, out);
    if s.t < 0.0 {
        out.push(Violation { stream: st, index: i, rule: Rule::OutOfRange { field: "t".into() } });
    }
    check_vec(&s.angular_velocity, "angular_velocity", st, i, out);
    check_vec(&s.linear_acceleration, "linear_acceleration", st, i, out);
    check_finite(s.yaw_rate, "yaw_rate", st, i, out);
    if (s.yaw_rate - s.angular_velocity.z).abs() > YAW_CONSISTENCY_TOL {
        out.push(Violation { stream: st, index: i, rule: Rule::YawMismatch });
    }
}

pub(crate) fn gps_violations(i: usize, s: &GpsSample, out: &mut Vec<Violation>) {
    let st = Stream::Gps;
    check_finite(s.t, "t", st, i, out);
    check_finite(s.altitude, "altitude", st, i, out);
    let mut range = |ok: bool, field: &str| {
        if !ok {
            out.push(Violation { stream: st, index: i, rule: Rule::OutOfRange { field: field.into() } });
        }
    };
    range(s.t >= 0.0, "t");
    range((-90.0..=90.0).contains(&s.latitude), "latitude");
    range((-180.0..=180.0).contains(&s.longitude), "longitude");
    range(s.speed.is_finite() && s.speed >= 0.0, "speed");
}

pub(crate) fn frame_violations(i: usize, f: &SensorFrame, out: &mut Vec<Violation>) {
    let st = Stream::Frames;
    check_finite(f.t, "t", st, i, out);
    if f.t < 0.0 {
        out.push(Violation { stream: st, index: i, rule: Rule::OutOfRange { field: "t".into() } });
    }
    let mut seen = BTreeSet::new();
    let lists = [(&f.camera_detections, true), (&f.lidar_detections, false)];
    for (list, camera) in lists {
        for d in list {
            if d.source.is_camera() != camera {
                out.push(Violation {
                    stream: st,
                    index: i,
                    rule: Rule::WrongSourceList { object_id: d.object_id, source: d.source },
                });
            }
            check_vec(&d.position, "position", st, i, out);
            if !(0.0..=1.0).contains(&d.confidence) {
                out.push(Violation {
                    stream: st,
                    index: i,
                    rule: Rule::OutOfRange { field: "confidence".into() },
                });
            }
            if !seen.insert((d.object_id, d.source)) {
                out.push(Violation {
                    stream: st,
                    index: i,
                    rule: Rule::DuplicateDetection { object_id: d.object_id, source: d.source },
                });
            }
        }
    }
}

fn monotonic_violations(times: impl Iterator<Item = f64>, stream: Stream, out: &mut Vec<Violation>) {
    let mut prev: Option<f64> = None;
    for (i, t) in times.enumerate() {
        if let Some(p) = prev {
            if t <= p {
                out.push(Violation { stream, index: i, rule: Rule::NonMonotonicTimestamp });
            }
        }
        prev = Some(t);
    }
}

/// Lists every broken invariant. Empty iff the trace is well-formed.
pub fn validate_trace(trace: &SensorTrace) -> Vec<Violation> {
    let mut out = meta_violations(&trace.meta);
    for (i, s) in trace.imu.iter().enumerate() {
        imu_violations(i, s, &mut out);
    }
    for (i, s) in trace.gps.iter().enumerate() {
        gps_violations(i, s, &mut out);
    }
    for (i, f) in trace.frames.iter().enumerate() {
        frame_violations(i, f, &mut out);
    }
    monotonic_violations(trace.imu.iter().map(|s| s.t), Stream::Imu, &mut out);
    monotonic_violations(trace.gps.iter().map(|s| s.t), Stream::Gps, &mut out);
    monotonic_violations(trace.frames.iter().map(|f| f.t), Stream::Frames, &mut out);
    out
}

impl SensorTrace {
    /// Index of the frame closest to `t`; ties go to the earlier frame.
    pub fn nearest_frame_index(&self, t: Timestamp, window: f64) -> Result<usize, TraceError> {
        if self.frames.is_empty() {
            return Err(TraceError::NoFrames);
        }
        let after = self.frames.partition_point(|f| f.t < t);
        let mut best = after.min(self.frames.len() - 1);
        if after > 0 {
            let before = after - 1;
            if (t - self.frames[before].t).abs() <= (self.frames[best].t - t).abs() {
                best = before;
            }
        }
        let distance = (self.frames[best].t - t).abs();
        if distance > window {
            return Err(TraceError::NoFrameInWindow { t, window, distance });
        }
        Ok(best)
    }

    pub fn nearest_frame(&self, t: Timestamp, window: f64) -> Result<&SensorFrame, TraceError> {
        self.nearest_frame_index(t, window).map(|i| &self.frames[i])
    }

    pub fn duration(&self) -> f64 {
        let last = |v: Option<f64>| v.unwrap_or(0.0);
        last(self.imu.last().map(|s| s.t))
            .max(last(self.gps.last().map(|s| s.t)))
            .max(last(self.frames.last().map(|f| f.t)))
    }
}

/// Free-function form of [`SensorTrace::nearest_frame`].
pub fn nearest_frame(trace: &SensorTrace, t: Timestamp, window: f64) -> Result<&SensorFrame, TraceError> {
    trace.nearest_frame(t, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta() -> RouteMeta {
        RouteMeta {
            name: "R1".into(),
            length: 1277.76,
            max_speed: 13.90,
            avg_speed: 7.30,
            dynamic_level: DynamicLevel::Small,
            has_side_cameras: false,
            has_roadside_obstructions: false,
        }
    }

    fn det(id: ObjectId, source: Source) -> ObjectDetection {
        ObjectDetection {
            object_id: id,
            label: "car".into(),
            category: Category::FourWheelVehicle,
            position: Vec3::new(10.0, 0.0, 0.0),
            source,
            confidence: 0.9,
        }
    }

    fn trace_with_frames(times: &[f64]) -> SensorTrace {
        SensorTrace {
            meta: meta(),
            imu: vec![],
            gps: vec![],
            frames: times
                .iter()
                .map(|&t| SensorFrame { t, ..Default::default() })
                .collect(),
        }
    }

    #[test]
    fn nearest_frame_picks_closest() {
        let tr = trace_with_frames(&[0.0, 0.1, 0.2]);
        assert_eq!(tr.nearest_frame(0.12, 0.1).unwrap().t, 0.1);
        assert_eq!(tr.nearest_frame(-0.05, 0.1).unwrap().t, 0.0);
        assert_eq!(tr.nearest_frame(0.25, 0.1).unwrap().t, 0.2);
    }

    #[test]
    fn nearest_frame_tie_goes_earlier() {
        let tr = trace_with_frames(&[0.0, 0.1, 0.2]);
        // 0.15 is not exactly representable; use a grid where the midpoint is exact
        assert_eq!(tr.nearest_frame(0.15, 0.1).unwrap().t, 0.1);
        let tr = trace_with_frames(&[0.0, 0.5, 1.0]);
        assert_eq!(tr.nearest_frame(0.75, 0.5).unwrap().t, 0.5);
    }

    #[test]
    fn nearest_frame_outside_window() {
        let tr = trace_with_frames(&[0.0, 0.1, 0.2]);
        assert!(matches!(tr.nearest_frame(5.0, 0.1), Err(TraceError::NoFrameInWindow { .. })));
        assert_eq!(trace_with_frames(&[]).nearest_frame(0.0, 1.0).unwrap_err(), TraceError::NoFrames);
    }

    #[test]
    fn well_formed_trace_has_no_violations() {
        let mut tr = trace_with_frames(&[0.0, 0.1]);
        tr.frames[0].lidar_detections.push(det(1, Source::Lidar));
        tr.frames[0].camera_detections.push(det(1, Source::CameraFront));
        assert!(validate_trace(&tr).is_empty());
    }

    #[test]
    fn speed_ordering_violation_names_route_meta() {
        let mut tr = trace_with_frames(&[0.0]);
        tr.meta.avg_speed = 20.0;
        let v = validate_trace(&tr);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0].rule, Rule::RouteMeta { .. }));
        assert!(v[0].to_string().contains("RouteMeta"));
    }

    #[test]
    fn duplicate_detection_is_one_violation() {
        let mut tr = trace_with_frames(&[0.0]);
        tr.frames[0].lidar_detections = vec![det(3, Source::Lidar), det(3, Source::Lidar)];
        let v = validate_trace(&tr);
        assert_eq!(v.len(), 1);
        assert_eq!(
            v[0].rule,
            Rule::DuplicateDetection { object_id: 3, source: Source::Lidar }
        );
    }

    #[test]
    fn same_id_from_different_sources_is_fine() {
        let mut tr = trace_with_frames(&[0.0]);
        tr.frames[0].camera_detections = vec![det(3, Source::CameraFront), det(3, Source::CameraLeft)];
        assert!(validate_trace(&tr).is_empty());
    }

    #[test]
    fn category_strings_round_trip() {
        for c in Category::ALL {
            assert_eq!(Category::parse(c.as_str()), Some(c));
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
        assert_eq!(Category::ALL.iter().filter(|c| c.is_dynamic()).count(), 3);
    }
}
