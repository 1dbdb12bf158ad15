use egosync_core::skeleton::{
    canonicalize, joint_error, mat_mul, rest_pose, rot_x, rot_y, rot_z, JointGroup, Skeleton, POSE_DIM,
};
use egosync_core::transfer::{kmeans, nearest_pose, quantize_poses};
use proptest::prelude::*;

fn skeleton_strategy() -> impl Strategy<Value = Skeleton> {
    prop::collection::vec(-8.0f64..8.0, POSE_DIM).prop_map(|noise| {
        let v: Vec<f64> = rest_pose().to_flat().iter().zip(&noise).map(|(a, b)| a + b).collect();
        Skeleton::from_flat(&v).unwrap()
    })
}

fn rotation_strategy() -> impl Strategy<Value = [[f64; 3]; 3]> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(a, b, c)| mat_mul(&rot_z(a), &mat_mul(&rot_y(b), &rot_x(c))))
}

fn distance(a: &Skeleton, b: &Skeleton) -> f64 {
    a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn error_ignores_similarity_transforms(
        a in skeleton_strategy(),
        b in skeleton_strategy(),
        r in rotation_strategy(),
        t in prop::array::uniform3(-500.0f64..500.0),
        scale in 0.5f64..2.0,
    ) {
        let all = JointGroup::all();
        let before = joint_error(&a, &b, &all).unwrap();
        let moved = a.scaled(scale).transformed(&r, t);
        let after = joint_error(&moved, &b, &all).unwrap();
        for (x, y) in before.per_joint.iter().zip(after.per_joint) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn canonical_frame_is_a_fixed_point(a in skeleton_strategy(), r in rotation_strategy()) {
        let c = canonicalize(&a.transformed(&r, [10.0, -4.0, 2.0])).unwrap();
        prop_assert!(distance(&canonicalize(&c).unwrap(), &c) < 1e-9);
    }

    #[test]
    fn kmeans_objective_never_increases(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 12..60),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let km = kmeans(&rows, k, seed).unwrap();
        for w in km.objective.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn nearest_pose_is_the_brute_force_minimum(
        pool in prop::collection::vec(skeleton_strategy(), 8..20),
        query in skeleton_strategy(),
    ) {
        let (vocab, _) = quantize_poses(&pool, 5, 3).unwrap();
        let x = query.to_flat();
        let sq = |c: &[f64]| c.iter().zip(&x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        let (i, c) = nearest_pose(&vocab, &query);
        let best = vocab.centers.iter().map(|c| sq(c)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(sq(c), best);
        prop_assert!(vocab.centers[..i].iter().all(|c| sq(c) > best));
    }
}

#[test]
fn one_center_per_sample_is_exact() {
    let pool: Vec<Skeleton> = (0..25).map(|i| rest_pose().transformed(&rot_x(0.02 * i as f64), [0.0; 3])).collect();
    let (vocab, km) = quantize_poses(&pool, pool.len(), 11).unwrap();
    assert_eq!(*km.objective.last().unwrap(), 0.0);
    for s in &pool {
        assert_eq!(nearest_pose(&vocab, s).1, &s.to_flat()[..]);
    }
}
