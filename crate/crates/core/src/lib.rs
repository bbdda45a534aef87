//! Multi-agent reasoning over synchronized camera, LiDAR, GPS and IMU
//! traces: critical-moment filtration, vehicle self-diagnosis,
//! environmental change analysis and response selection.
//!
//! Numeric kernels are generic over [`scalar::Real`]; the aliases below
//! fix them at `f64` (and `f32` where a lighter type is handy).

pub mod agent;
pub mod environment;
pub mod eval;
pub mod filtration;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod response;
pub mod scalar;
pub mod synth;
pub mod trace;
pub mod vehicle;

pub use scalar::Real;

pub type Vec3f = geometry::Vec3<f64>;
pub type Vec3f32 = geometry::Vec3<f32>;
pub type Thresholds = filtration::ThresholdSet<f64>;
pub type Thresholds32 = filtration::ThresholdSet<f32>;
pub type Consistency = vehicle::Consistency<f64>;

pub use agent::{invoke, Backend, BackendKind};
pub use filtration::{CriticalEvent, Factor};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport};
pub use synth::{generate_trace, GroundTruth, ScenarioSpec};
pub use trace::{parse_trace, SensorTrace};
