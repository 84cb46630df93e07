use proptest::prelude::*;
use stiffdiff::objectives::{task_objective, StiffnessSchedule};
use stiffdiff::sim::*;
use stiffdiff::Vec2;

fn demo_cases() -> Vec<(SurfaceModel<f64>, MotionKind, MotionParams)> {
    let base = MotionParams::default();
    vec![
        (SurfaceModel::circular_arc(0.3, 0.0, 0.3), MotionKind::SpiralAnalog, base),
        (
            SurfaceModel::circular_arc(0.3, 0.0, 0.3),
            MotionKind::Wavelike,
            MotionParams { start_x: -0.08, ..base },
        ),
        (
            SurfaceModel::sinusoid(0.02, 0.5, 0.0, 0.2),
            MotionKind::Wavelike,
            MotionParams { start_x: -0.1, ..base },
        ),
        (SurfaceModel::flat(0.0, 0.5), MotionKind::Line, base),
    ]
}

#[test]
fn rollout_at_demo_stiffness_reproduces_demo_forces() {
    let cfg = SimConfig::default();
    for (i, (surface, kind, params)) in demo_cases().into_iter().enumerate() {
        let demo = generate_demo(&cfg, &surface, kind, &params, i as u64).unwrap();
        let k = Vec2::new(DEMO_STIFFNESS, DEMO_STIFFNESS);
        let sched = StiffnessSchedule::constant(k, 10, demo.horizon()).unwrap();
        let out = rollout(&cfg, &surface, &sched, &demo).unwrap();
        let rmse = task_objective(&out.forces, &demo.forces).unwrap();
        assert!(rmse <= 0.05, "{kind:?} on {:?}: rmse {rmse}", surface.kind);
    }
}

/// Free-space demo driven by a moving attractor under a stiff controller.
fn free_space_demo(cfg: &SimConfig<f64>) -> (SurfaceModel<f64>, Trajectory<f64>) {
    let surface = SurfaceModel::flat(-10.0, 0.3);
    // Recording starts after a settling window so the demo has no start-up kink.
    let (pre, h) = (40, 200);
    let k = vec![Vec2::new(DEMO_STIFFNESS, DEMO_STIFFNESS); pre + h];
    let attr: Vec<_> = (0..pre + h)
        .map(|i| {
            let t = i as f64 * cfg.dt;
            Vec2::new(0.1 * (2.0 * t).sin(), 0.05 * (3.0 * t).cos())
        })
        .collect();
    let (full, _) = simulate(cfg, &surface, attr[0], Vec2::zero(), &k, &attr).unwrap();
    let demo = Trajectory {
        dt: full.dt,
        poses: full.poses[pre..].to_vec(),
        velocities: full.velocities[pre..].to_vec(),
        attractors: full.attractors[pre..].to_vec(),
        forces: full.forces[pre..].to_vec(),
        meta: full.meta,
    };
    (surface, demo)
}

#[test]
fn attractor_round_trip_in_free_space() {
    let cfg = SimConfig::default();
    let (surface, demo) = free_space_demo(&cfg);
    // The unobserved plant drag shifts the pose by at most drag / K.
    for kval in [200.0, 1500.0, 2000.0] {
        let sched = StiffnessSchedule::constant(Vec2::new(kval, kval), 10, demo.horizon()).unwrap();
        let out = rollout(&cfg, &surface, &sched, &demo).unwrap();
        let err = out.poses.iter().zip(&demo.poses).map(|(a, b)| (*a - *b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "K={kval}: pose error {err}");
    }
    let no_drag = SimConfig {
        plant_drag: 0.0,
        ..SimConfig::default()
    };
    let (surface, demo) = free_space_demo(&no_drag);
    for kval in [10.0, 50.0, 2000.0] {
        let sched = StiffnessSchedule::constant(Vec2::new(kval, kval * 0.5), 10, demo.horizon()).unwrap();
        let out = rollout(&no_drag, &surface, &sched, &demo).unwrap();
        let err = out.poses.iter().zip(&demo.poses).map(|(a, b)| (*a - *b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "drag-free K={kval}: pose error {err}");
    }
}

#[test]
fn rollouts_are_bit_identical() {
    let cfg = SimConfig::default();
    let (surface, kind, params) = demo_cases().remove(0);
    let demo = generate_demo(&cfg, &surface, kind, &params, 9).unwrap();
    let sched = StiffnessSchedule::from_log_vector(&(0..20).map(|i| 3.0 + 0.2 * i as f64).collect::<Vec<_>>(), 200).unwrap();
    let a = rollout(&cfg, &surface, &sched, &demo).unwrap();
    let b = rollout(&cfg, &surface, &sched, &demo).unwrap();
    assert_eq!(a.to_json_line().unwrap(), b.to_json_line().unwrap());
}

#[test]
fn single_precision_rollout_tracks_double() {
    let cfg = SimConfig::default();
    let (surface, kind, params) = demo_cases().remove(1);
    let demo = generate_demo(&cfg, &surface, kind, &params, 4).unwrap();
    let sched = StiffnessSchedule::constant(Vec2::new(300.0, 300.0), 10, 200).unwrap();
    let d = rollout(&cfg, &surface, &sched, &demo).unwrap();
    let s = rollout(&SimConfig::<f32>::default(), &surface.cast(), &sched.cast(), &demo.cast()).unwrap();
    let diff = d.forces.iter().zip(&s.forces).map(|(a, b)| (a.x - b.x as f64).abs().max((a.z - b.z as f64).abs())).fold(0.0, f64::max);
    assert!(diff < 0.05, "f32 vs f64 force gap {diff}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn contact_invariants_hold_on_random_rollouts(
        case in 0usize..4,
        seed in 0u64..1000,
        logk in proptest::collection::vec(10f64.ln()..2000f64.ln(), 20),
    ) {
        let cfg = SimConfig::default();
        let (surface, kind, params) = demo_cases().remove(case);
        let demo = generate_demo(&cfg, &surface, kind, &params, seed).unwrap();
        let sched = StiffnessSchedule::from_log_vector(&logk, demo.horizon()).unwrap();
        let (_, records) = rollout_detailed(&cfg, &surface, &sched, &demo).unwrap();
        for (t, r) in records.iter().enumerate() {
            if r.gap_after > 1e-6 {
                prop_assert!(r.normal_force.abs() <= 1e-9 && r.tangent_force.abs() <= 1e-9,
                    "step {}: separated with force ({}, {})", t, r.normal_force, r.tangent_force);
            }
            prop_assert!(r.normal_force >= -1e-9, "step {}: F_n {}", t, r.normal_force);
            prop_assert!(r.tangent_force.abs() <= r.friction_coefficient * r.normal_force + 1e-8,
                "step {}: |F_t| {} > mu F_n {}", t, r.tangent_force.abs(), r.friction_coefficient * r.normal_force);
            prop_assert!(r.gap_after >= -1e-4, "step {}: penetration {}", t, r.gap_after);
        }
    }
}
