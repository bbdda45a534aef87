#![allow(dead_code)]

use drive_reasoner::filtration::Factor;
use drive_reasoner::geometry::Vec3;
use drive_reasoner::synth::{inject_maneuver, FaultSpec, ScenarioSpec, Trajectory};
use drive_reasoner::trace::{CameraView, Category, DynamicLevel, RouteMeta};

pub fn route(name: &str) -> RouteMeta {
    RouteMeta {
        name: name.into(),
        length: 1200.0,
        max_speed: 12.0,
        avg_speed: 7.0,
        dynamic_level: DynamicLevel::Small,
        has_side_cameras: true,
        has_roadside_obstructions: false,
    }
}

/// Static scenery: one object per camera view plus one behind.
pub fn scenery(spec: ScenarioSpec) -> ScenarioSpec {
    spec.with_object(Category::Sign, Vec3::new(25.0, 3.0, 0.0), Trajectory::Stationary)
        .with_object(Category::FixedInstallation, Vec3::new(40.0, -6.0, 0.0), Trajectory::Stationary)
        .with_object(Category::Plant, Vec3::new(5.0, 15.0, 0.0), Trajectory::Stationary)
        .with_object(Category::Monitor, Vec3::new(-3.0, -12.0, 1.0), Trajectory::Stationary)
}

pub fn null_scenario(duration: f64, seed: u64) -> ScenarioSpec {
    scenery(ScenarioSpec::new(route("null"), duration, 10.0, seed))
}

/// Three maneuvers, a front misalignment over the second, a crossing
/// pedestrian and a sign knocked sideways between the second and third.
pub fn maximal_scenario(duration: f64, seed: u64) -> ScenarioSpec {
    let spec = scenery(ScenarioSpec::new(route("maximal"), duration, 10.0, seed))
        .with_object(
            Category::Pedestrian,
            Vec3::new(12.0, -6.0, 0.0),
            Trajectory::Linear { velocity: Vec3::new(0.0, 1.4, 0.0) },
        )
        .with_fault(FaultSpec::CameraMisalignment {
            view: CameraView::Front,
            offset: Vec3::new(0.0, 4.5, 0.0),
            start: duration * 0.45,
            end: duration * 0.55,
        })
        .with_fault(FaultSpec::DisplacedStaticObject { object: 1, offset: Vec3::new(0.0, 2.0, 0.0), at: duration * 0.65 });
    let spec = inject_maneuver(&spec, duration * 0.25, Factor::Turning, 1.5).unwrap();
    let spec = inject_maneuver(&spec, duration * 0.5, Factor::OrientationChange, 1.2).unwrap();
    inject_maneuver(&spec, duration * 0.8, Factor::AccelBrake, 1.5).unwrap()
}
