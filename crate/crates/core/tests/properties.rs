use lmp_core::dmp::{canonical, forcing, gripper_crossing_phase, make_basis, GOAL_EPSILON};
use lmp_core::geometry::{gjk_intersect, obb_overlap, Obb};
use lmp_core::{build_specs, rollout, BasisKind, DmpParams, RolloutConfig};
use proptest::prelude::*;

fn weight_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (
        prop::collection::vec(prop::collection::vec(-0.9f64..0.9, 11), 4),
        prop::collection::vec(-1.0f64..1.0, 11),
    )
        .prop_map(|(mut rows, grip)| {
            rows.push(grip);
            rows
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rollout_ends_at_goal(
        start in prop::array::uniform3(-0.5f64..0.5),
        goal in prop::array::uniform3(-0.5f64..0.5),
        yaw in (-3.0f64..3.0, -3.0f64..3.0),
        grip in (0.0f64..=1.0, 0.0f64..=1.0),
        weights in weight_rows(),
    ) {
        let params = DmpParams::default();
        let s = [start[0], start[1], start[2], yaw.0, grip.0];
        let g = [goal[0], goal[1], goal[2], yaw.1, grip.1];
        let specs = build_specs(&params, s, g, &weights).unwrap();
        let traj = rollout(&specs, &RolloutConfig::for_duration(params.duration)).unwrap();
        prop_assert!(traj.goal_error(&specs) < GOAL_EPSILON, "{}", traj.goal_error(&specs));
        prop_assert_eq!(traj.samples[0].pose, s);
    }

    #[test]
    fn forcing_is_bounded_by_decay_times_largest_weight(
        t in 0.0f64..10.0,
        weights in prop::collection::vec(-1.0f64..1.0, 11),
        gaussian in any::<bool>(),
    ) {
        let kind = if gaussian { BasisKind::Gaussian } else { BasisKind::Step };
        let basis = make_basis(kind, 11).unwrap();
        let c = canonical(t, 5.0, 6.0);
        let f = forcing(&weights, &basis, &c).unwrap();
        let wmax = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        prop_assert!(f.abs() <= c.decay * wmax + 1e-12);
    }

    #[test]
    fn decay_never_increases(t in 0.0f64..10.0, dt in 0.0f64..1.0) {
        let a = canonical(t, 5.0, 6.0);
        let b = canonical(t + dt, 5.0, 6.0);
        prop_assert!(b.decay <= a.decay);
        prop_assert!((0.0..=1.0).contains(&a.decay));
    }

    #[test]
    fn raising_a_gripper_weight_never_delays_closing(
        weights in prop::collection::vec(-1.0f64..1.0, 11),
        index in 0usize..11,
        bump in 0.0f64..1.0,
    ) {
        let params = DmpParams::default();
        let crossing = |w: &[f64]| {
            let mut rows = vec![vec![0.0; 11]; 4];
            rows.push(w.to_vec());
            let specs = build_specs(&params, [0.0; 5], [0.0, 0.0, 0.0, 0.0, 1.0], &rows).unwrap();
            let traj = rollout(&specs, &RolloutConfig::for_duration(params.duration)).unwrap();
            gripper_crossing_phase(&traj, 0.5).unwrap_or(f64::INFINITY)
        };
        let mut raised = weights.clone();
        raised[index] = (raised[index] + bump).min(1.0);
        prop_assert!(crossing(&raised) <= crossing(&weights));
    }

    #[test]
    fn gjk_matches_sat_on_random_boxes(
        c in prop::array::uniform3(-0.3f64..0.3),
        e1 in prop::array::uniform3(0.02f64..0.3),
        e2 in prop::array::uniform3(0.02f64..0.3),
        y1 in -3.2f64..3.2,
        y2 in -3.2f64..3.2,
    ) {
        let a = Obb::new([0.0, 0.0, 0.0], e1, y1);
        let b = Obb::new(c, e2, y2);
        prop_assert_eq!(gjk_intersect(&a, &b), obb_overlap(&a, &b));
    }
}
