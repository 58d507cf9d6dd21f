//! Agreement with scikit-learn's HDBSCAN on stored fixtures (see
//! `fixtures/generate.py`), plus structural properties of the output.

use std::collections::BTreeMap;
use std::path::PathBuf;

use hdbscan::{cluster, core_distances, mutual_reachability_mst, ClusterParams, Points, NOISE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURES: [&str; 5] = ["two_blobs", "density_noise", "eight_dim", "nested_3d", "moons"];

struct Fixture {
    data: Vec<f64>,
    dim: usize,
    labels: Vec<i32>,
    params: ClusterParams,
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn load(name: &str) -> Fixture {
    let csv = std::fs::read_to_string(fixture_dir().join(format!("{name}.csv"))).unwrap();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for line in csv.lines().filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        dim = fields.len() - 1;
        data.extend(fields[..dim].iter().map(|v| v.parse::<f64>().unwrap()));
        labels.push(fields[dim].parse::<i32>().unwrap());
    }
    let json = std::fs::read_to_string(fixture_dir().join(format!("{name}.json"))).unwrap();
    let params = parse_params(&json);
    Fixture { data, dim, labels, params }
}

// The fixture parameter files are flat one-line JSON objects.
fn parse_params(json: &str) -> ClusterParams {
    let body = json.trim().trim_start_matches('{').trim_end_matches('}');
    let mut map = BTreeMap::new();
    for kv in body.split(',') {
        let (k, v) = kv.split_once(':').unwrap();
        map.insert(k.trim().trim_matches('"').to_string(), v.trim().to_string());
    }
    ClusterParams {
        min_cluster_size: map["min_cluster_size"].parse().unwrap(),
        min_samples: match map["min_samples"].as_str() {
            "null" => None,
            v => Some(v.parse().unwrap()),
        },
        cluster_selection_epsilon: map["cluster_selection_epsilon"].parse().unwrap(),
        allow_single_cluster: false,
    }
}

/// True when `a` and `b` agree up to a bijective renaming of non-noise labels.
fn same_partition(a: &[i32], b: &[i32]) -> bool {
    let mut fwd = BTreeMap::new();
    let mut bwd = BTreeMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        if (x == NOISE) != (y == NOISE) {
            return false;
        }
        if x == NOISE {
            return true;
        }
        *fwd.entry(x).or_insert(y) == y && *bwd.entry(y).or_insert(x) == x
    })
}

#[test]
fn matches_reference_labels_on_all_fixtures() {
    for name in FIXTURES {
        let fx = load(name);
        let points = Points::new(&fx.data, fx.dim).unwrap();
        let result = cluster(points, &fx.params).unwrap();
        assert!(
            same_partition(&result.labels, &fx.labels),
            "{name}: labels differ from reference ({} vs {} clusters)",
            result.n_clusters,
            fx.labels.iter().max().unwrap() + 1
        );
    }
}

#[test]
fn two_blobs_recovered_with_little_noise() {
    let fx = load("two_blobs");
    let result = cluster(Points::new(&fx.data, fx.dim).unwrap(), &fx.params).unwrap();
    assert_eq!(result.n_clusters, 2);
    assert!(result.noise_count() as f64 <= 0.02 * 400.0);
    // fixture rows are ordered blob by blob
    let truth: Vec<i32> = (0..400).map(|i| (i / 200) as i32).collect();
    let clustered: Vec<(i32, i32)> = result
        .labels
        .iter()
        .zip(&truth)
        .filter(|(l, _)| **l != NOISE)
        .map(|(l, t)| (*l, *t))
        .collect();
    let (a, b): (Vec<i32>, Vec<i32>) = clustered.into_iter().unzip();
    assert!(same_partition(&a, &b));
}

/// Kruskal over the explicit mutual reachability graph.
fn brute_force_mst_weight(points: Points<'_>, core: &[f64]) -> f64 {
    let n = points.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = points.distance(i, j).max(core[i]).max(core[j]);
            edges.push((w, i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut total = 0.0;
    for (w, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            total += w;
        }
    }
    total
}

#[test]
fn mst_weight_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, dim, k) in [(50, 2, 5), (120, 3, 10), (200, 6, 40), (200, 2, 1)] {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let points = Points::new(&data, dim).unwrap();
        let core = core_distances(points, k);
        let mst = mutual_reachability_mst(points, &core);
        assert_eq!(mst.len(), n - 1);
        let prim: f64 = mst.iter().map(|e| e.weight).sum();
        let kruskal = brute_force_mst_weight(points, &core);
        assert!((prim - kruskal).abs() <= 1e-9 * kruskal.max(1.0), "n={n}: {prim} vs {kruskal}");
    }
}

#[test]
fn duplicated_points_keep_cluster_structure() {
    let fx = load("two_blobs");
    let base = cluster(Points::new(&fx.data, fx.dim).unwrap(), &fx.params).unwrap();
    let mut doubled = fx.data.clone();
    doubled.extend_from_slice(&fx.data);
    let dup = cluster(Points::new(&doubled, fx.dim).unwrap(), &fx.params).unwrap();
    assert_eq!(dup.n_clusters, base.n_clusters);
    let n = fx.labels.len();
    assert_eq!(dup.labels[..n], dup.labels[n..]);
    assert!(same_partition(&dup.labels[..n], &base.labels));
}

#[test]
fn every_cluster_meets_min_size() {
    for name in FIXTURES {
        let fx = load(name);
        let result = cluster(Points::new(&fx.data, fx.dim).unwrap(), &fx.params).unwrap();
        assert_eq!(result.stabilities.len(), result.n_clusters);
        for size in result.cluster_sizes() {
            assert!(size >= fx.params.min_cluster_size, "{name}: cluster of {size}");
        }
    }
}
