mod common;

use drive_reasoner::agent::{Backend, BackendKind};
use drive_reasoner::environment::Origin;
use drive_reasoner::eval::evaluate;
use drive_reasoner::pipeline::{reasoning_cases, run_pipeline, write_report, PipelineConfig};
use drive_reasoner::synth::generate_trace;
use drive_reasoner::trace::CameraView;
use drive_reasoner::vehicle::VehicleFlag;

#[test]
fn null_scenario_has_no_events() {
    let (trace, _) = generate_trace(&common::null_scenario(20.0, 1)).unwrap();
    let report = run_pipeline(&trace, &PipelineConfig::default(), &Backend::Deterministic).unwrap();
    assert!(report.events.is_empty());
    assert_eq!(report.metadata.backend_counts.get(&BackendKind::Deterministic), Some(&1));
}

#[test]
fn maximal_scenario_surfaces_every_phenomenon() {
    let (trace, truth) = generate_trace(&common::maximal_scenario(20.0, 3)).unwrap();
    let report = run_pipeline(&trace, &PipelineConfig::default(), &Backend::Deterministic).unwrap();
    let factors: Vec<_> = report.events.iter().map(|e| e.event.factor).collect();
    let expected: Vec<_> = truth.maneuvers.iter().map(|m| m.factor).collect();
    assert_eq!(factors, expected);

    let second = &report.events[1];
    assert!(second.vehicle.diagnosis.flags.contains(&VehicleFlag::SensorMisalignment));
    assert_eq!(second.vehicle.diagnosis.misaligned_views, vec![CameraView::Front]);
    assert!(report.events[0].vehicle.diagnosis.is_ok());
    assert!(report.events[2].vehicle.diagnosis.is_ok());

    let third = &report.events[2].environment.causal.assessments;
    let sign = third.iter().find(|a| a.object_id == 1).expect("displaced sign assessed");
    assert_eq!(sign.origin, Origin::ExternallyInfluenced);
    assert!(sign.caution);
    for e in &report.events {
        let ped = e.environment.causal.assessments.iter().find(|a| a.object_id == 5).expect("pedestrian assessed");
        assert_eq!(ped.origin, Origin::SelfMoving);
    }

    let (pred, gold) = reasoning_cases(&report, &trace, &truth, &PipelineConfig::default().environment);
    let eval = evaluate(&pred, &gold, 2.0).unwrap();
    for a in &eval.accuracy {
        assert_eq!(a.accuracy, 1.0, "{a:?}");
    }
}

#[test]
fn deterministic_runs_match_modulo_wall_time() {
    let (trace, _) = generate_trace(&common::maximal_scenario(12.0, 8)).unwrap();
    let cfg = PipelineConfig::default();
    let a = run_pipeline(&trace, &cfg, &Backend::Deterministic).unwrap();
    let b = run_pipeline(&trace, &cfg, &Backend::Deterministic).unwrap();
    assert_eq!(a.golden_json(), b.golden_json());

    let dir = tempdir();
    let p1 = write_report(&a, &dir).unwrap();
    let p2 = write_report(&b, &dir).unwrap();
    assert_ne!(p1, p2);
    assert!(p2.file_name().unwrap().to_str().unwrap().ends_with("-1.json"));
    std::fs::remove_dir_all(&dir).unwrap();
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("drive-reasoner-test-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn config_hash_tracks_tunables() {
    let a = PipelineConfig::default();
    let mut b = a.clone();
    b.vehicle.tau_obj = 2.5;
    let mut c = a.clone();
    c.output_dir = "elsewhere".into();
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), c.hash());
    assert_eq!(a.hash(), PipelineConfig::default().hash());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let e = PipelineConfig::from_json(r#"{"vehicle": {"tau_obj": 2.0, "typo": 1}}"#).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let e = PipelineConfig::from_json(r#"{"vehicle": {"tau_obj": -1.0}}"#).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let ok = PipelineConfig::from_json(r#"{"backend": "deterministic", "frame_window": 0.25}"#).unwrap();
    assert_eq!(ok.frame_window, 0.25);
}
