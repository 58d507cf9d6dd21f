use groupfield::geometry::distance;
use groupfield::synth::{generate_scene, CameraRig, HierSpec};
use proptest::prelude::*;

fn rig() -> CameraRig {
    CameraRig {
        n_views: 3,
        width: 48,
        height: 48,
        ..CameraRig::default()
    }
}

fn spec() -> impl Strategy<Value = HierSpec> {
    (prop::collection::vec(1usize..4, 2..4), 5usize..30, 0.0f64..0.6, any::<u64>()).prop_map(
        |(branching, points_per_leaf, size_jitter, seed)| {
            let spread = (0..branching.len()).map(|l| 0.3 * 0.3f64.powi(l as i32)).collect();
            HierSpec {
                branching,
                spread,
                points_per_leaf,
                size_jitter,
                seed,
                ..HierSpec::default()
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn points_respect_their_groups(spec in spec()) {
        let scene = generate_scene(&spec, &rig()).unwrap();
        let leaves: usize = spec.branching.iter().product();
        prop_assert_eq!(scene.points.len(), leaves * spec.points_per_leaf);
        for level in 0..spec.levels() {
            for (p, &point) in scene.points.iter().enumerate() {
                let g = scene.labels[level][p] as usize;
                let r = scene.radii[level][g];
                prop_assert!(r <= spec.spread[level] + 1e-12);
                prop_assert!(distance(point, scene.centers[level][g]) <= r + 1e-12);
                if level > 0 {
                    // a group's parent is the group of its points one level up
                    prop_assert_eq!(scene.parents[level][g], scene.labels[level - 1][p]);
                }
            }
        }
    }

    #[test]
    fn group_ids_are_dense_and_nonempty(spec in spec()) {
        let scene = generate_scene(&spec, &rig()).unwrap();
        for level in 0..spec.levels() {
            let expected: usize = spec.branching[..=level].iter().product();
            prop_assert_eq!(scene.group_count(level), expected);
            for g in 0..expected as u32 {
                prop_assert!(!scene.group_members(level, g).is_empty());
            }
        }
    }
}
