use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use drive_reasoner::agent::{parse_structured, wrap_structured, AgentOutput, AgentRole};
use drive_reasoner::environment::{agreement_distance, detect_changes, ChangeKind, EnvParams};
use drive_reasoner::eval::{compute_metrics, match_detections, match_pairs, reasoning_accuracy, Aggregation, ReasoningTask};
use drive_reasoner::filtration::{select_from_imu, Factor, ThresholdSet};
use drive_reasoner::geometry::Vec3;
use drive_reasoner::response::{generate_response, Insight, InsightCategory};
use drive_reasoner::synth::{generate_trace, FaultSpec, ScenarioSpec, Trajectory, VehicleStatus};
use drive_reasoner::trace::{
    parse_trace_str, serialize_trace, CameraView, Category, DynamicLevel, ImuSample, ObjectDetection, RouteMeta, Source,
};
use drive_reasoner::vehicle::{cross_sensor_consistency, gate_range};

fn coord() -> impl Strategy<Value = f64> {
    -200.0..200.0f64
}

fn vec3() -> impl Strategy<Value = Vec3<f64>> {
    (coord(), coord(), -5.0..5.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn category() -> impl Strategy<Value = Category> {
    prop::sample::select(Category::ALL.to_vec())
}

fn insight_category() -> impl Strategy<Value = InsightCategory> {
    prop::sample::select(InsightCategory::ALL.to_vec())
}

fn insights() -> impl Strategy<Value = Vec<Insight>> {
    prop::collection::vec((insight_category(), 0.0..3.0f64, 0.0..10.0f64), 1..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (category, magnitude, t))| Insight {
                id: format!("i{i}"),
                description: format!("insight {i}"),
                category,
                magnitude,
                t,
            })
            .collect()
    })
}

fn route() -> RouteMeta {
    RouteMeta {
        name: "prop".into(),
        length: 100.0,
        max_speed: 10.0,
        avg_speed: 5.0,
        dynamic_level: DynamicLevel::Medium,
        has_side_cameras: true,
        has_roadside_obstructions: true,
    }
}

proptest! {
    #[test]
    fn delta_is_symmetric_and_translation_invariant(a in vec3(), b in vec3(), shift in vec3()) {
        let d = agreement_distance(&a, &b);
        prop_assert_eq!(d, agreement_distance(&b, &a));
        prop_assert!((agreement_distance(&(a + shift), &(b + shift)) - d).abs() <= 1e-9 * (1.0 + d));
        prop_assert!(d >= 0.0);
    }

    #[test]
    fn consistency_matches_per_object_distance(pairs in prop::collection::vec((vec3(), vec3()), 0..10)) {
        let lidar: BTreeMap<u64, _> = pairs.iter().enumerate().map(|(i, p)| (i as u64, p.0)).collect();
        let camera: BTreeMap<u64, _> = pairs.iter().enumerate().map(|(i, p)| (i as u64, p.1)).collect();
        let gated: BTreeSet<u64> = lidar.keys().copied().collect();
        let c = cross_sensor_consistency(&gated, &lidar, &camera);
        for (id, d) in &c.deltas {
            prop_assert_eq!(*d, lidar[id].distance(&camera[id]));
        }
        prop_assert!(c.skipped.is_empty());
    }

    #[test]
    fn range_gate_grows_with_limit(points in prop::collection::vec(vec3(), 0..20), r1 in 0.0..300.0f64, extra in 0.0..100.0f64) {
        let dets: Vec<ObjectDetection> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ObjectDetection {
                object_id: i as u64,
                label: "x".into(),
                category: Category::Sign,
                position: *p,
                source: Source::Lidar,
                confidence: 1.0,
            })
            .collect();
        let small = gate_range(&dets, r1);
        let large = gate_range(&dets, r1 + extra);
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn lower_thresholds_never_lose_events(
        samples in prop::collection::vec((0.0..25.0f64, 0.0..20.0f64, 0.0..25.0f64), 1..200),
        scale in 0.3..1.0f64,
    ) {
        let imu: Vec<ImuSample> = samples
            .iter()
            .enumerate()
            .map(|(i, (w, a, y))| ImuSample {
                t: i as f64 * 0.01,
                angular_velocity: Vec3::new(0.0, *w, 0.0),
                linear_acceleration: Vec3::new(*a, 0.0, 9.81),
                yaw_rate: *y,
            })
            .collect();
        let base = ThresholdSet::<f64>::baseline();
        let strict: BTreeSet<u64> = select_from_imu(&imu, &base, 0.0).unwrap().iter().map(|e| (e.t * 100.0).round() as u64).collect();
        let loose: BTreeSet<u64> = select_from_imu(&imu, &base.scaled(scale), 0.0).unwrap().iter().map(|e| (e.t * 100.0).round() as u64).collect();
        prop_assert!(strict.is_subset(&loose));
    }

    #[test]
    fn change_kinds_partition_the_objects(
        prev in prop::collection::btree_map(0u64..12, (category(), vec3()), 0..8),
        cur in prop::collection::btree_map(0u64..12, (category(), vec3()), 0..8),
    ) {
        let dets = |m: &BTreeMap<u64, (Category, Vec3<f64>)>, prev: Option<&BTreeMap<u64, (Category, Vec3<f64>)>>| -> Vec<ObjectDetection> {
            m.iter()
                .map(|(id, (c, p))| ObjectDetection {
                    object_id: *id,
                    label: "x".into(),
                    category: prev.and_then(|pm| pm.get(id)).map(|x| x.0).unwrap_or(*c),
                    position: *p,
                    source: Source::Lidar,
                    confidence: 1.0,
                })
                .collect()
        };
        let (lp, lc) = (dets(&prev, None), dets(&cur, Some(&prev)));
        let params = EnvParams::default();
        let report = detect_changes(0.0, 1.0, &[], &[], &lp, &lc, &params);
        report.validate(&params).unwrap();
        let mut seen = BTreeSet::new();
        for c in &report.changes {
            prop_assert!(seen.insert(c.object_id), "object reported twice");
            let expected = match (prev.get(&c.object_id), cur.get(&c.object_id)) {
                (Some(_), None) => ChangeKind::Disappeared,
                (None, Some(_)) => ChangeKind::Appeared,
                (Some(a), Some(b)) => {
                    prop_assert!(a.1.distance(&b.1) > params.move_epsilon);
                    ChangeKind::Moved
                }
                (None, None) => unreachable!(),
            };
            prop_assert_eq!(c.kind, expected);
        }
        for (id, (_, p)) in &prev {
            let untouched = cur.get(id).is_some_and(|(_, q)| p.distance(q) <= params.move_epsilon);
            prop_assert_eq!(untouched, !seen.contains(id));
        }
    }

    #[test]
    fn response_ignores_insight_order(set in insights(), seed in any::<u64>()) {
        let mut shuffled = set.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let a = generate_response(&set).unwrap();
        let b = generate_response(&shuffled).unwrap();
        prop_assert_eq!(&a.top_insight, &b.top_insight);
        prop_assert_eq!(&a.chosen_response, &b.chosen_response);
        let present = set.iter().map(|i| i.category.priority()).max().unwrap();
        prop_assert_eq!(a.top_insight.category.priority(), present);
    }

    #[test]
    fn structured_round_trip_for_responses(set in insights()) {
        let out = AgentOutput::Response(generate_response(&set).unwrap());
        let raw = wrap_structured("", &out);
        prop_assert_eq!(parse_structured(AgentRole::ResponseAggregator, &raw).unwrap(), out);
    }

    #[test]
    fn greedy_match_is_optimal_on_small_sets(
        p in prop::collection::vec((0.0..6.0f64, 0.0..6.0f64), 0..7),
        g in prop::collection::vec((0.0..6.0f64, 0.0..6.0f64), 0..7),
    ) {
        let p: Vec<_> = p.into_iter().map(|(x, y)| Vec3::new(x, y, 0.0)).collect();
        let g: Vec<_> = g.into_iter().map(|(x, y)| Vec3::new(x, y, 0.0)).collect();
        prop_assert_eq!(match_pairs(&p, &g, 2.0).len(), brute_force(&p, &g, 2.0));
    }

    #[test]
    fn micro_equals_single_category(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
        let p: Vec<_> = (0..tp + fp).map(|i| (Category::Plant, Vec3::new(i as f64 * 10.0, 0.0, 0.0))).collect();
        let g: Vec<_> = (0..tp).map(|i| (Category::Plant, Vec3::new(i as f64 * 10.0, 0.0, 0.0)))
            .chain((0..fn_).map(|i| (Category::Plant, Vec3::new(i as f64 * 10.0, 500.0, 0.0))))
            .collect();
        let counts = match_detections(&p, &g, 2.0);
        let m = compute_metrics(&counts, Aggregation::Micro);
        prop_assert_eq!(m.aggregate, m.per_category[&Category::Plant]);
        prop_assert_eq!(m.aggregate, compute_metrics(&counts, Aggregation::Macro).aggregate);
    }

    #[test]
    fn accuracy_ignores_case_order(verdicts in prop::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
        let gold: BTreeMap<String, String> = verdicts.iter().enumerate().map(|(i, v)| (format!("c{i}"), v.0.to_string())).collect();
        let pred: BTreeMap<String, String> = verdicts.iter().enumerate().map(|(i, v)| (format!("c{i}"), v.1.to_string())).collect();
        let reversed: BTreeMap<String, String> = pred.iter().rev().map(|(k, v)| (k.clone(), v.clone())).collect();
        let a = reasoning_accuracy(&pred, &gold, ReasoningTask::VehicleLidar, "p").unwrap();
        let b = reasoning_accuracy(&reversed, &gold, ReasoningTask::VehicleLidar, "p").unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synth_labels_follow_fault_windows(
        start in 0.0..4.0f64,
        len in 0.2..3.0f64,
        view in prop::sample::select(vec![CameraView::Front, CameraView::Left, CameraView::Right]),
        seed in any::<u64>(),
    ) {
        let end = start + len;
        let spec = ScenarioSpec::new(route(), 6.0, 10.0, seed)
            .with_object(Category::Sign, Vec3::new(20.0, 1.0, 0.0), Trajectory::Stationary)
            .with_fault(FaultSpec::CameraMisalignment { view, offset: Vec3::new(0.0, 4.0, 0.0), start, end })
            .with_fault(FaultSpec::LidarDropout { start: end, end: end + 0.5 });
        let (trace, truth) = generate_trace(&spec).unwrap();
        prop_assert_eq!(truth.frames.len(), trace.frames.len());
        for f in &truth.frames {
            let mut expected = Vec::new();
            if f.t >= start && f.t <= end {
                expected.push(VehicleStatus::Misaligned(view));
            }
            if f.t >= end && f.t <= end + 0.5 {
                expected.push(VehicleStatus::LidarFault);
            }
            expected.sort();
            if expected.is_empty() {
                expected.push(VehicleStatus::Ok);
            }
            prop_assert_eq!(&f.status, &expected);
        }
    }

    #[test]
    fn trace_text_round_trip(seed in any::<u64>(), vx in -2.0..2.0f64, sigma in 0.0..0.5f64) {
        let spec = ScenarioSpec::new(route(), 2.0, 5.0, seed)
            .with_object(Category::Pedestrian, Vec3::new(8.0, -2.0, 0.0), Trajectory::Linear { velocity: Vec3::new(vx, 0.5, 0.0) })
            .with_object(Category::Sign, Vec3::new(-4.0, 9.0, 0.0), Trajectory::Stationary)
            .with_fault(FaultSpec::LidarNoise { sigma, start: 0.0, end: 2.0 });
        let spec = drive_reasoner::synth::inject_maneuver(&spec, 1.0, Factor::Turning, 1.3).unwrap();
        let (trace, _) = generate_trace(&spec).unwrap();
        let text = serialize_trace(&trace);
        let back = parse_trace_str(&text).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(serialize_trace(&back), text);
    }
}

/// Maximum number of disjoint pairs within `radius`, by exhaustive search.
fn brute_force(p: &[Vec3<f64>], g: &[Vec3<f64>], radius: f64) -> usize {
    fn go(i: usize, p: &[Vec3<f64>], g: &[Vec3<f64>], used: &mut Vec<bool>, radius: f64) -> usize {
        if i == p.len() {
            return 0;
        }
        let mut best = go(i + 1, p, g, used, radius);
        for j in 0..g.len() {
            if !used[j] && p[i].distance(&g[j]) <= radius {
                used[j] = true;
                best = best.max(1 + go(i + 1, p, g, used, radius));
                used[j] = false;
            }
        }
        best
    }
    go(0, p, g, &mut vec![false; g.len()], radius)
}
