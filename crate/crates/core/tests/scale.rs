use groupfield::geometry::{Camera, DepthMap};
use groupfield::scale::{assign_scale, spread_of, ScaleNormalizer, ScaleStatistic};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    n_quantiles: usize,
    scales: Vec<f64>,
    probes: Vec<f64>,
    expected: Vec<f64>,
}

#[derive(Deserialize)]
struct Golden {
    cases: Vec<Case>,
}

#[test]
fn normalizer_matches_reference_quantile_transform() {
    let text = include_str!("fixtures/quantile_golden.json");
    let golden: Golden = serde_json::from_str(text).unwrap();
    for case in golden.cases {
        let n = ScaleNormalizer::fit_with(&case.scales, 100.0, case.n_quantiles).unwrap();
        for (p, want) in case.probes.iter().zip(&case.expected) {
            let got = n.transform(*p);
            assert!((got - want).abs() < 1e-12, "probe {p}: {got} vs {want}");
        }
    }
}

fn rotate_z(p: [f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

proptest! {
    #[test]
    fn transform_is_monotone(mut scales in prop::collection::vec(0.0f64..5.0, 2..200), a in -1.0f64..6.0, b in -1.0f64..6.0) {
        scales.push(0.0);
        scales.push(5.0);
        let n = ScaleNormalizer::fit(&scales, 10.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(n.transform(lo) <= n.transform(hi));
        prop_assert!((0.0..=1.0).contains(&n.transform(a)));
    }

    #[test]
    fn fit_ignores_input_order(scales in prop::collection::vec(0.0f64..5.0, 3..100), seed in any::<u64>()) {
        prop_assume!(scales.iter().any(|&s| s != scales[0]));
        let mut shuffled = scales.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(ScaleNormalizer::fit(&scales, 9.0).unwrap(), ScaleNormalizer::fit(&shuffled, 9.0).unwrap());
    }

    #[test]
    fn spread_is_translation_invariant(pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..50), t in prop::array::uniform3(-10.0f64..10.0)) {
        let moved: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
        let a = spread_of(&pts, ScaleStatistic::StdNorm);
        let b = spread_of(&moved, ScaleStatistic::StdNorm);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn spread_of_isotropic_ring_is_rotation_invariant(theta in 0.0f64..6.3, r in 0.1f64..2.0) {
        // evenly spaced points on a circle plus its axis have equal variance in-plane
        let pts: Vec<[f64; 3]> = (0..24)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 24.0;
                [r * a.cos(), r * a.sin(), if i % 2 == 0 { r } else { -r }]
            })
            .collect();
        let rotated: Vec<[f64; 3]> = pts.iter().map(|&p| rotate_z(p, theta)).collect();
        let a = spread_of(&pts, ScaleStatistic::StdNorm);
        let b = spread_of(&rotated, ScaleStatistic::StdNorm);
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn same_points_seen_from_two_cameras_get_the_same_scale() {
    // a flat fronto-parallel patch rendered by two cameras facing it from the same
    // distance deprojects to the same world points
    let a = Camera::look_at([0.0, 0.0, -4.0], [0.0; 3], [0.0, -1.0, 0.0], 40.0, 40.0, 20, 20);
    let b = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, -1.0, 0.0], 40.0, 40.0, 20, 20);
    let mut depth = DepthMap::empty(20, 20);
    let mut pixels = Vec::new();
    for y in 5..15u32 {
        for x in 5..15u32 {
            depth.data[(y * 20 + x) as usize] = 4.0;
            pixels.push(y * 20 + x);
        }
    }
    let sa = assign_scale(&pixels, &depth, &a, 8.0, ScaleStatistic::StdNorm).unwrap();
    let sb = assign_scale(&pixels, &depth, &b, 8.0, ScaleStatistic::StdNorm).unwrap();
    assert!((sa - sb).abs() < 1e-12);
}
