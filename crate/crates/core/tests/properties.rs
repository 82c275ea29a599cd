use ghostarm_core::dataset::{ActionChunk, ActionSpace, NormalizationStats};
use ghostarm_core::executor::Smoother;
use ghostarm_core::kinematics::{forward_kinematics, inverse_kinematics, max_wrapped_difference, ArmModel};
use ghostarm_core::{Joints, Pose};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn in_limits() -> impl Strategy<Value = Joints> {
    let model = ArmModel::ur3e();
    let l = model.joint_limits;
    (
        l[0].min..l[0].max,
        l[1].min..l[1].max,
        l[2].min..l[2].max,
        l[3].min..l[3].max,
        l[4].min..l[4].max,
        l[5].min..l[5].max,
    )
        .prop_map(|(a, b, c, d, e, f)| [a, b, c, d, e, f])
}

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-1.0..1.0f64), prop::array::uniform3(-3.0..3.0f64))
        .prop_map(|(p, r)| Pose::new(Vector3::from(p), UnitQuaternion::from_scaled_axis(Vector3::from(r))))
}

proptest! {
    #[test]
    fn ik_recovers_the_configuration(q in in_limits()) {
        let model = ArmModel::ur3e();
        let set = inverse_kinematics(&model, &forward_kinematics(&model, &q), Some(&q)).unwrap();
        // Seeded with q itself, the nearest branch is q.
        prop_assert!(max_wrapped_difference(&set.solutions[0].q, &q) < 1e-6);
        let d = |s: &Joints| s.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let sorted = set.solutions.windows(2).all(|w| d(&w[0].q) <= d(&w[1].q));
        prop_assert!(sorted);
    }

    #[test]
    fn pose_serde_is_bit_exact(p in pose()) {
        let c = p.canonical();
        let text = serde_json::to_string(&c).unwrap();
        let back: Pose = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.position.map(f64::to_bits), c.position.map(f64::to_bits));
        prop_assert_eq!(back.wxyz().map(f64::to_bits), c.wxyz().map(f64::to_bits));
    }

    #[test]
    fn chunks_reassemble_the_stream(len in 1usize..300, horizon in 1usize..120) {
        let actions: Vec<Vec<f64>> = (0..len).map(|i| vec![i as f64 * 0.1, -(i as f64), 0.0, 0.0, 0.0, 0.0, (i % 2) as f64]).collect();
        let mut rebuilt = Vec::new();
        for t in (0..len).step_by(horizon) {
            let c = ActionChunk::from_stream(ActionSpace::Joint, &actions, t, horizon, 0.0);
            prop_assert_eq!(c.actions.len(), horizon);
            prop_assert_eq!(c.valid_len(), horizon.min(len - t));
            rebuilt.extend(c.actions.iter().zip(&c.mask).filter(|(_, m)| **m).map(|(a, _)| a.clone()));
        }
        prop_assert_eq!(rebuilt, actions);
    }

    #[test]
    fn normalization_inverts(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 7), 1..40)) {
        let stats = NormalizationStats::fit_actions(&rows, ActionSpace::Joint, 100).unwrap();
        for r in &rows {
            let back = stats.invert(&stats.apply(r));
            for (a, b) in back.iter().zip(r) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn smoothing_a_constant_is_exact(v in prop::collection::vec(-3.0..3.0f64, 6), window in 1usize..8, n in 1usize..20) {
        let mut s = Smoother::new(ActionSpace::Joint, window);
        let mut action = v.clone();
        action.push(1.0);
        for _ in 0..n {
            prop_assert_eq!(s.push(&action), action.clone());
        }
    }
}
