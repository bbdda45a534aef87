//! Line-delimited JSON trace format.
//!
//! Each line is one JSON object tagged by `"kind"`:
//!
//! ```text
//! {"kind":"meta","name":"R1","length":1277.76,"max_speed":13.9,"avg_speed":7.3,
//!  "dynamic_level":"small","has_side_cameras":false,"has_roadside_obstructions":false}
//! {"kind":"imu","t":0.0,"angular_velocity":[0,0,0],"linear_acceleration":[0,0,9.81],"yaw_rate":0}
//! {"kind":"gps","t":0.0,"lat":40.0,"lon":-83.0,"alt":220.0,"speed":7.3}
//! {"kind":"frame","t":0.0,"camera":[{"id":1,"label":"car","category":"four-wheel-vehicle",
//!  "pos":[10,0,0],"source":"camera-front","conf":0.9}],"lidar":[...]}
//! ```
//!
//! The meta record must be the first line and appear exactly once. In IMU
//! records either `angular_velocity` or `yaw_rate` may be omitted; the missing
//! one is derived from the other.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::*;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    #[allow(dead_code)]
    kind: String,
    name: String,
    length: f64,
    max_speed: f64,
    avg_speed: f64,
    dynamic_level: DynamicLevel,
    has_side_cameras: bool,
    has_roadside_obstructions: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImuRecord {
    #[allow(dead_code)]
    kind: String,
    t: f64,
    angular_velocity: Option<Vec3<f64>>,
    linear_acceleration: Vec3<f64>,
    yaw_rate: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpsRecord {
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    kind: String,
    t: f64,
    lat: f64,
    lon: f64,
    alt: f64,
    speed: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    #[allow(dead_code)]
    kind: String,
    t: f64,
    #[serde(default)]
    camera: Vec<DetectionRecord>,
    #[serde(default)]
    lidar: Vec<DetectionRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    id: ObjectId,
    label: String,
    category: String,
    pos: Vec3<f64>,
    source: String,
    conf: f64,
}

fn malformed(line: usize, detail: impl Into<String>) -> TraceError {
    TraceError::MalformedRecord { line, detail: detail.into() }
}

fn decode<T: for<'de> Deserialize<'de>>(value: Value, line: usize) -> Result<T, TraceError> {
    serde_json::from_value(value).map_err(|e| malformed(line, e.to_string()))
}

fn detection(rec: DetectionRecord, line: usize) -> Result<ObjectDetection, TraceError> {
    let category =
        Category::parse(&rec.category).ok_or_else(|| TraceError::UnknownCategory(rec.category.clone()))?;
    let source = Source::parse(&rec.source)
        .ok_or_else(|| malformed(line, format!("unknown source {:?}", rec.source)))?;
    Ok(ObjectDetection {
        object_id: rec.id,
        label: rec.label,
        category,
        position: rec.pos,
        source,
        confidence: rec.conf,
    })
}

fn first_violation(line: usize, violations: Vec<Violation>) -> Result<(), TraceError> {
    match violations.into_iter().next() {
        None => Ok(()),
        Some(violation) => Err(TraceError::Invariant { line, violation }),
    }
}

fn check_order(prev: Option<f64>, t: f64, stream: Stream, index: usize) -> Result<(), TraceError> {
    match prev {
        Some(p) if t <= p => Err(TraceError::NonMonotonicTimestamp { stream, index }),
        _ => Ok(()),
    }
}

/// Reads and validates a trace from any buffered reader.
pub fn parse_trace<R: BufRead>(input: R) -> Result<SensorTrace, TraceError> {
    let mut meta: Option<RouteMeta> = None;
    let mut imu = Vec::new();
    let mut gps = Vec::new();
    let mut frames: Vec<SensorFrame> = Vec::new();

    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let text = line.map_err(|e| TraceError::Io(e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| malformed(line_no, e.to_string()))?;
        let kind = value
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(line_no, "missing \"kind\""))?
            .to_owned();

        if kind == "meta" {
            if meta.is_some() || line_no != 1 {
                return Err(malformed(line_no, "meta record must be the single first line"));
            }
        } else if meta.is_none() {
            return Err(malformed(line_no, "first record must be meta"));
        }

        match kind.as_str() {
            "meta" => {
                let r: MetaRecord = decode(value, line_no)?;
                let m = RouteMeta {
                    name: r.name,
                    length: r.length,
                    max_speed: r.max_speed,
                    avg_speed: r.avg_speed,
                    dynamic_level: r.dynamic_level,
                    has_side_cameras: r.has_side_cameras,
                    has_roadside_obstructions: r.has_roadside_obstructions,
                };
                first_violation(line_no, meta_violations(&m))?;
                meta = Some(m);
            }
            "imu" => {
                let r: ImuRecord = decode(value, line_no)?;
                let (angular_velocity, yaw_rate) = match (r.angular_velocity, r.yaw_rate) {
                    (Some(w), Some(y)) => (w, y),
                    (Some(w), None) => (w, w.z),
                    (None, Some(y)) => (Vec3::new(0.0, 0.0, y), y),
                    (None, None) => {
                        return Err(malformed(line_no, "imu needs angular_velocity or yaw_rate"))
                    }
                };
                let s = ImuSample { t: r.t, angular_velocity, linear_acceleration: r.linear_acceleration, yaw_rate };
                let mut v = Vec::new();
                imu_violations(imu.len(), &s, &mut v);
                first_violation(line_no, v)?;
                check_order(imu.last().map(|p: &ImuSample| p.t), s.t, Stream::Imu, imu.len())?;
                imu.push(s);
            }
            "gps" => {
                let r: GpsRecord = decode(value, line_no)?;
                let s = GpsSample { t: r.t, latitude: r.lat, longitude: r.lon, altitude: r.alt, speed: r.speed };
                let mut v = Vec::new();
                gps_violations(gps.len(), &s, &mut v);
                first_violation(line_no, v)?;
                check_order(gps.last().map(|p: &GpsSample| p.t), s.t, Stream::Gps, gps.len())?;
                gps.push(s);
            }
            "frame" => {
                let r: FrameRecord = decode(value, line_no)?;
                let camera = r
                    .camera
                    .into_iter()
                    .map(|d| detection(d, line_no))
                    .collect::<Result<Vec<_>, _>>()?;
                let lidar = r
                    .lidar
                    .into_iter()
                    .map(|d| detection(d, line_no))
                    .collect::<Result<Vec<_>, _>>()?;
                let frame = SensorFrame { t: r.t, camera_detections: camera, lidar_detections: lidar };
                let mut seen = BTreeSet::new();
                for d in frame.detections() {
                    if !seen.insert((d.object_id, d.source)) {
                        return Err(TraceError::DuplicateDetection {
                            t: frame.t,
                            object_id: d.object_id,
                            sensor: d.source,
                        });
                    }
                }
                let mut v = Vec::new();
                frame_violations(frames.len(), &frame, &mut v);
                first_violation(line_no, v)?;
                check_order(frames.last().map(|p| p.t), frame.t, Stream::Frames, frames.len())?;
                frames.push(frame);
            }
            other => return Err(malformed(line_no, format!("unknown kind {other:?}"))),
        }
    }

    let meta = meta.ok_or_else(|| malformed(1, "empty trace: missing meta record"))?;
    Ok(SensorTrace { meta, imu, gps, frames })
}

pub fn parse_trace_str(input: &str) -> Result<SensorTrace, TraceError> {
    parse_trace(input.as_bytes())
}

fn detection_value(d: &ObjectDetection) -> Value {
    serde_json::to_value(DetectionRecord {
        id: d.object_id,
        label: d.label.clone(),
        category: d.category.as_str().to_owned(),
        pos: d.position,
        source: d.source.as_str().to_owned(),
        conf: d.confidence,
    })
    .expect("detection serializes")
}

enum Item<'a> {
    Imu(&'a ImuSample),
    Gps(&'a GpsSample),
    Frame(&'a SensorFrame),
}

/// Writes the trace as JSONL: meta first, then all samples merged by time.
pub fn write_trace<W: Write>(trace: &SensorTrace, mut out: W) -> std::io::Result<()> {
    let m = &trace.meta;
    let meta = serde_json::json!({
        "kind": "meta",
        "name": m.name,
        "length": m.length,
        "max_speed": m.max_speed,
        "avg_speed": m.avg_speed,
        "dynamic_level": m.dynamic_level,
        "has_side_cameras": m.has_side_cameras,
        "has_roadside_obstructions": m.has_roadside_obstructions,
    });
    writeln!(out, "{meta}")?;

    let mut items: Vec<(f64, u8, Item)> = Vec::with_capacity(trace.imu.len() + trace.gps.len() + trace.frames.len());
    items.extend(trace.imu.iter().map(|s| (s.t, 0, Item::Imu(s))));
    items.extend(trace.gps.iter().map(|s| (s.t, 1, Item::Gps(s))));
    items.extend(trace.frames.iter().map(|f| (f.t, 2, Item::Frame(f))));
    // stable sort keeps each stream's own order intact
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    for (_, _, item) in items {
        let v = match item {
            Item::Imu(s) => serde_json::json!({
                "kind": "imu",
                "t": s.t,
                "angular_velocity": s.angular_velocity,
                "linear_acceleration": s.linear_acceleration,
                "yaw_rate": s.yaw_rate,
            }),
            Item::Gps(s) => serde_json::json!({
                "kind": "gps",
                "t": s.t,
                "lat": s.latitude,
                "lon": s.longitude,
                "alt": s.altitude,
                "speed": s.speed,
            }),
            Item::Frame(f) => serde_json::json!({
                "kind": "frame",
                "t": f.t,
                "camera": f.camera_detections.iter().map(detection_value).collect::<Vec<_>>(),
                "lidar": f.lidar_detections.iter().map(detection_value).collect::<Vec<_>>(),
            }),
        };
        writeln!(out, "{v}")?;
    }
    Ok(())
}

pub fn serialize_trace(trace: &SensorTrace) -> String {
    let mut buf = Vec::new();
    write_trace(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}
