use approx::assert_abs_diff_eq;
use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::Rng;
use sal_core::metrics::*;
use sal_core::seed::rng_from_seed;
use sal_core::trajectory::{parse_tum_trajectory, write_tum_trajectory, Pose, Trajectory};

fn random_trajectory(seed: u64, n: usize) -> Trajectory {
    let mut rng = rng_from_seed(seed);
    let poses = (0..n)
        .map(|i| {
            let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let r = UnitQuaternion::from_euler_angles(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            Pose::new(i as f64 * 0.1, t, r)
        })
        .collect();
    Trajectory::new(poses).unwrap()
}

fn transformed(t: &Trajectory, r: &UnitQuaternion<f64>, tr: Vector3<f64>, s: f64) -> Trajectory {
    Trajectory::new(
        t.poses()
            .iter()
            .map(|p| Pose::new(p.timestamp, s * (r * p.translation) + tr, r * p.rotation))
            .collect(),
    )
    .unwrap()
}

#[test]
fn ate_of_identical_trajectories_is_zero() {
    let t = random_trajectory(1, 30);
    for a in [Alignment::None, Alignment::Se3, Alignment::Sim3] {
        assert_abs_diff_eq!(ate(&t, &t, a).unwrap().stats.rmse, 0.0, epsilon = 1e-12);
    }
}

#[test]
fn se3_alignment_removes_rigid_motion() {
    let t = random_trajectory(2, 40);
    let r = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
    let moved = transformed(&t, &r, Vector3::new(4.0, -2.0, 7.5), 1.0);
    assert!(ate(&t, &moved, Alignment::Se3).unwrap().stats.rmse < 1e-9);
    assert!(ate(&t, &moved, Alignment::None).unwrap().stats.rmse > 1.0);
}

#[test]
fn sim3_alignment_removes_scale() {
    let t = random_trajectory(3, 40);
    let moved = transformed(&t, &UnitQuaternion::identity(), Vector3::zeros(), 2.5);
    assert!(ate(&t, &moved, Alignment::Sim3).unwrap().stats.rmse < 1e-9);
    assert!(ate(&t, &moved, Alignment::Se3).unwrap().stats.rmse > 0.1);
}

#[test]
fn two_pose_hand_computed() {
    let r = Trajectory::new(vec![Pose::from_position(0.0, 0.0, 0.0, 0.0), Pose::from_position(1.0, 1.0, 0.0, 0.0)]).unwrap();
    let e = Trajectory::new(vec![Pose::from_position(0.0, 0.0, 0.0, 0.1), Pose::from_position(1.0, 1.0, 0.0, 0.0)]).unwrap();
    let a = ate(&r, &e, Alignment::None).unwrap();
    assert_abs_diff_eq!(a.stats.rmse, 0.005f64.sqrt(), epsilon = 1e-12);
    assert_eq!(a.stats.n_pairs, 2);
}

#[test]
fn rmse_squared_is_mean_square() {
    let s = ErrorStats::from_errors(&[1.0, 1.0, 7.0, 7.0]).unwrap();
    assert_eq!(s.rmse * s.rmse, 25.0);
    assert_eq!(s.mean, 4.0);
    assert_eq!(s.median, 4.0);
    assert_eq!(s.std, 3.0);
    assert_eq!((s.min, s.max), (1.0, 7.0));
}

#[test]
fn rpe_of_constant_offset_is_zero() {
    let t = random_trajectory(4, 25);
    let r = UnitQuaternion::from_euler_angles(0.5, 0.2, -0.7);
    // a constant left-multiplied pose leaves relative motion unchanged
    let moved = transformed(&t, &r, Vector3::new(1.0, 2.0, 3.0), 1.0);
    assert!(rpe(&t, &moved, 1).unwrap().stats.rmse < 1e-9);
    assert!(rpe(&t, &moved, 3).unwrap().stats.rmse < 1e-9);
}

#[test]
fn umeyama_recovers_known_similarity() {
    let mut rng = rng_from_seed(99);
    let p: Vec<Vector3<f64>> = (0..10)
        .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
        .collect();
    let rot = Rotation3::from_euler_angles(0.7, -0.4, 1.9);
    let (t, s) = (Vector3::new(0.5, -8.0, 2.25), 1.7);
    let q: Vec<Vector3<f64>> = p.iter().map(|x| s * (rot * x) + t).collect();
    let sim = umeyama_align(&q, &p, true).unwrap();
    assert!((sim.rotation - rot.matrix()).abs().max() < 1e-9);
    assert!((sim.translation - t).abs().max() < 1e-9);
    assert!((sim.scale - s).abs() < 1e-9);
}

#[test]
fn association_tolerance() {
    let r = random_trajectory(5, 10);
    let shifted = Trajectory::new(
        r.poses()
            .iter()
            .map(|p| Pose::new(p.timestamp + 0.015, p.translation, p.rotation))
            .collect(),
    )
    .unwrap();
    assert_eq!(associate(&r, &shifted, DEFAULT_MAX_DT).unwrap().len(), 10);
    assert!(associate(&r, &shifted, 0.01).is_err());
}

#[test]
fn table_delta_convention() {
    let clean = LevelSummary::from_runs("clean", vec![Some(0.1326)]);
    let levels = vec![
        LevelSummary::from_runs("light", vec![Some(0.14)]),
        LevelSummary::from_runs("severe", vec![Some(0.3623)]),
    ];
    let g = aggregate_runs("rain", levels, &clean);
    assert_eq!(format_delta(g.delta_percent.unwrap()), "+173%");
    assert_eq!(g.delta_level.as_deref(), Some("severe"));

    let levels = vec![
        LevelSummary::from_runs("heavy", vec![Some(0.15)]),
        LevelSummary::from_runs("severe", vec![None, None]),
    ];
    let g = aggregate_runs("rain", levels, &clean);
    assert!(g.levels[1].failed);
    assert_eq!(g.delta_level.as_deref(), Some("heavy"));
    assert_eq!(format_delta(g.delta_percent.unwrap()), "+13%");
}

#[test]
fn partial_failures_average_completed_runs() {
    let l = LevelSummary::from_runs("x", vec![Some(1.0), None, Some(3.0)]);
    assert_eq!(l.mean, Some(2.0));
    assert_eq!(l.failed_runs, 1);
    assert!(!l.failed);
}

#[test]
fn tum_round_trip_precision() {
    let t = random_trajectory(6, 50);
    let back = parse_tum_trajectory(&write_tum_trajectory(&t)).unwrap();
    for (a, b) in t.poses().iter().zip(back.poses()) {
        assert!((a.timestamp - b.timestamp).abs() < 1e-9);
        assert!((a.translation - b.translation).abs().max() < 1e-9);
        let (qa, qb) = (a.rotation.coords, b.rotation.coords);
        assert!((qa - qb).abs().max().min((qa + qb).abs().max()) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ate_invariances(seed in any::<u64>(), yaw in -3.0f64..3.0, tx in -10.0f64..10.0, s in 0.2f64..5.0) {
        let t = random_trajectory(seed, 12);
        let r = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        let rigid = transformed(&t, &r, Vector3::new(tx, 1.0, -2.0), 1.0);
        prop_assert!(ate(&t, &rigid, Alignment::Se3).unwrap().stats.rmse < 1e-7);
        let scaled = transformed(&t, &r, Vector3::new(tx, 1.0, -2.0), s);
        prop_assert!(ate(&t, &scaled, Alignment::Sim3).unwrap().stats.rmse < 1e-7);
    }

    #[test]
    fn stats_are_ordered(errors in prop::collection::vec(0.0f64..100.0, 1..50)) {
        let s = ErrorStats::from_errors(&errors).unwrap();
        prop_assert!(s.min <= s.median && s.median <= s.max);
        prop_assert!(s.mean <= s.rmse + 1e-12);
        let ms = errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64;
        prop_assert!((s.rmse * s.rmse - ms).abs() < 1e-9 * ms.max(1.0));
    }
}
