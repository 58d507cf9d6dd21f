//! One PASS/FAIL line per acceptance criterion. Pass name fragments as
//! arguments to run a subset, e.g. `cargo test -p groupfield-acceptance
//! --test acceptance -- sampling`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use groupfield::dataset::Dataset;
use groupfield::decompose::{build_tree, DecomposeParams, PointFeatures, Selector};
use groupfield::eval::{default_clicks, evaluate, EvalInputs};
use groupfield::field::checkpoint;
use groupfield::field::{AffinityField, FieldConfig, RaySample, Real};
use groupfield::scale::{assign_all, ScaleStatistic};
use groupfield::synth::{generate_scene, CameraRig, HierSpec, LevelMix};
use groupfield::train::gradcheck::{all_params, check_gradients, ParamRef};
use groupfield::train::loss::{batch_loss, pull_loss, push_loss};
use groupfield::train::sampling::choose_mask;
use groupfield::train::{
    loss_and_grad, prepare_field, sample_batch, train, PixelPool, SamplingConfig, TrainBatch, TrainConfig,
};
use groupfield_acceptance::{dataset, run, Result, Run, Variant, EVAL_THRESHOLD};
use hdbscan::{cluster, core_distances, mutual_reachability_mst, ClusterParams, Points, NOISE};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String)>;

struct Suite {
    filters: Vec<String>,
    failed: Vec<&'static str>,
}

impl Suite {
    fn wanted(&self, name: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| name.contains(f.as_str()))
    }

    fn record(&mut self, name: &'static str, started: Instant, outcome: Check) {
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name} ({secs:.1}s): {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }

    fn check(&mut self, name: &'static str, f: impl FnOnce() -> Check) {
        if self.wanted(name) {
            let t0 = Instant::now();
            let outcome = f();
            self.record(name, t0, outcome);
        }
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut suite = Suite {
        filters,
        failed: Vec::new(),
    };

    suite.check("gradients", gradients);
    suite.check("loss_identities", loss_identities);
    suite.check("hdbscan_oracle", hdbscan_oracle);
    suite.check("sampling_statistics", sampling_statistics);

    let needs_model = ["end_to_end", "ablation", "containment"].iter().any(|n| suite.wanted(n));
    if needs_model {
        let t0 = Instant::now();
        let full = dataset().and_then(|ds| run(&ds, Variant::FULL).map(|r| (ds, r)));
        match full {
            Ok((ds, full)) => {
                let setup = t0.elapsed();
                if suite.wanted("end_to_end") {
                    suite.record("end_to_end", t0, end_to_end(&full, setup));
                }
                if suite.wanted("ablation") {
                    let t1 = Instant::now();
                    let outcome = ablation(&ds, &full, setup);
                    suite.record("ablation", t1, outcome);
                }
                suite.check("containment", || containment(&ds, &full.model));
            }
            Err(e) => {
                for name in ["end_to_end", "ablation", "containment"] {
                    if suite.wanted(name) {
                        suite.record(name, t0, Err(format!("full run failed: {e}").into()));
                    }
                }
            }
        }
    }

    suite.check("determinism", determinism);

    if !suite.failed.is_empty() {
        println!("failed: {}", suite.failed.join(", "));
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- gradients

fn grad_dataset() -> Result<Dataset> {
    let spec = HierSpec {
        branching: vec![2, 2],
        spread: vec![0.3, 0.1],
        points_per_leaf: 40,
        seed: 5,
        ..HierSpec::default()
    };
    let rig = CameraRig {
        n_views: 4,
        width: 64,
        height: 64,
        ..CameraRig::default()
    };
    let scene = generate_scene(&spec, &rig)?;
    let mut ds = Dataset::from_scene(&scene, &LevelMix::exact())?;
    assign_all(&mut ds, ScaleStatistic::StdNorm)?;
    Ok(ds)
}

fn grad_model<R: Real>(ds: &Dataset, cfg: FieldConfig) -> Result<AffinityField<R>> {
    let (cfg, normalizer) = prepare_field(ds, cfg)?;
    Ok(AffinityField::new(cfg, normalizer)?)
}

fn grad_batch<R: Real>(ds: &Dataset, m: &AffinityField<R>, images: usize, rays: usize) -> Result<TrainBatch> {
    let cfg = SamplingConfig {
        images_per_batch: images,
        rays_per_image: rays,
        ..SamplingConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = sample_batch(ds, &PixelPool::new(ds), &cfg, &m.normalizer, &mut rng)?;
    if !b.has_containment() {
        return Err("batch has no containment pairs".into());
    }
    Ok(b)
}

fn gradients() -> Check {
    let t0 = Instant::now();
    let ds = grad_dataset()?;
    let weights = TrainConfig::default().loss_weights();

    // f64, every parameter; hash init 0.1 keeps central differences well conditioned
    let tiny = FieldConfig {
        n_levels: 2,
        hashmap_size_log2: 6,
        base_resolution: 2,
        max_resolution: 4,
        mlp_layers: 2,
        mlp_width: 8,
        out_dim: 4,
        init_range: 0.1,
        ..FieldConfig::default()
    };
    let m = grad_model::<f64>(&ds, tiny)?;
    let b = grad_batch(&ds, &m, 3, 6)?;
    let checks = check_gradients(&m, &b, &weights, &all_params(&m), 1e-5)?;
    let worst64 = checks.iter().map(|c| c.rel_err(1e-9)).fold(0.0, f64::max);

    // f32 default config, 30 touched parameters per group
    let m = grad_model::<f32>(&ds, FieldConfig::default())?;
    let b = grad_batch(&ds, &m, 2, 8)?;
    let mut grads = m.zero_grads();
    loss_and_grad(&m, &b, &weights, &mut grads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst32: f64 = 0.0;
    let mut sampled = 0;
    for (group, g) in grads.slices().iter().enumerate() {
        let touched: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let pick: Vec<ParamRef> = touched.choose_multiple(&mut rng, 30).map(|&index| ParamRef { group, index }).collect();
        let h = if group == 0 { 1e-7 } else { 1e-5 };
        sampled += pick.len();
        for c in check_gradients(&m, &b, &weights, &pick, h)? {
            worst32 = worst32.max(c.rel_err(1e-9));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        worst64 < 1e-6 && worst32 < 1e-3 && secs < 60.0,
        format!(
            "f64 worst rel err {worst64:.2e} over {} params (< 1e-6); f32 worst {worst32:.2e} over {sampled} sampled (< 1e-3); {secs:.1}s (< 60s)",
            checks.len()
        ),
    ))
}

// ---------------------------------------------------------- loss identities

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Loss parts of a one-image, two-ray batch with features `a` and `b`.
fn two_ray_loss(a: &[f64], b: &[f64], same_mask: bool, margin: f64) -> (f64, f64) {
    let batch = TrainBatch {
        rays: vec![RaySample::point([0.0; 3]); 2],
        image_ranges: vec![0..2],
        view: vec![0, 0],
        pixel: vec![0, 1],
        mask: vec![0, if same_mask { 0 } else { 1 }],
        scale: vec![0.1, 0.1],
        contain_scale: vec![None, None],
    };
    let f = Array2::from_shape_vec((2, a.len()), [a, b].concat()).unwrap();
    let w = groupfield::train::loss::LossWeights {
        margin,
        pull: 1.0,
        push: 1.0,
        containment: 1.0,
    };
    let (parts, _, _) = batch_loss(&batch, f.view(), None, &w, 1.0);
    (parts.pull, parts.push)
}

fn loss_identities() -> Check {
    let tol = 1e-7;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut note = |got: f64, want: f64| worst = worst.max((got - want).abs());
    for _ in 0..100 {
        let f = unit(&mut rng, 16);
        let m = rng.gen_range(0.1..2.0);
        note(pull_loss(&f, &f), 0.0);
        note(push_loss(&f, &f, m), m);
        // b at distance exactly m from a
        let dir = unit(&mut rng, 16);
        let b: Vec<f64> = f.iter().zip(&dir).map(|(x, d)| x + m * d).collect();
        note(push_loss(&f, &b, m), 0.0);
        note(two_ray_loss(&f, &f, true, m).0, 0.0);
        note(two_ray_loss(&f, &f, false, m).1, m);
    }
    let (e0, e1) = (vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]);
    note(pull_loss(&e0, &e1), 2f64.sqrt());
    note(push_loss(&e0, &e1, 1.0), 0.0);
    note(two_ray_loss(&e0, &e1, true, 1.0).0, 2f64.sqrt());
    note(two_ray_loss(&e0, &e1, false, 1.0).1, 0.0);
    // push below the orthogonal distance: m - sqrt 2
    note(push_loss(&e0, &e1, 2.0), 2.0 - 2f64.sqrt());
    Ok((worst < tol, format!("max abs deviation {worst:.2e} (< {tol:.0e})")))
}

// ------------------------------------------------------------------ hdbscan

const HDBSCAN_FIXTURES: [&str; 5] = ["two_blobs", "density_noise", "eight_dim", "nested_3d", "moons"];

fn hdbscan_fixture(name: &str) -> Result<(Vec<f64>, usize, Vec<i32>, ClusterParams)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../hdbscan/tests/fixtures");
    let csv = std::fs::read_to_string(dir.join(format!("{name}.csv")))?;
    let (mut data, mut labels, mut dim) = (Vec::new(), Vec::new(), 0);
    for line in csv.lines().filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        dim = fields.len() - 1;
        for v in &fields[..dim] {
            data.push(v.parse::<f64>()?);
        }
        labels.push(fields[dim].parse::<i32>()?);
    }
    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{name}.json")))?)?;
    let params = ClusterParams {
        min_cluster_size: p["min_cluster_size"].as_u64().ok_or("min_cluster_size")? as usize,
        min_samples: p["min_samples"].as_u64().map(|v| v as usize),
        cluster_selection_epsilon: p["cluster_selection_epsilon"].as_f64().ok_or("cluster_selection_epsilon")?,
        allow_single_cluster: false,
    };
    Ok((data, dim, labels, params))
}

fn same_partition(a: &[i32], b: &[i32]) -> bool {
    let mut fwd = BTreeMap::new();
    let mut bwd = BTreeMap::new();
    a.len() == b.len()
        && a.iter().zip(b).all(|(&x, &y)| {
            if (x == NOISE) != (y == NOISE) {
                return false;
            }
            x == NOISE || (*fwd.entry(x).or_insert(y) == y && *bwd.entry(y).or_insert(x) == x)
        })
}

fn kruskal_weight(points: Points<'_>, core: &[f64]) -> f64 {
    let n = points.len();
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((points.distance(i, j).max(core[i]).max(core[j]), i, j));
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

fn hdbscan_oracle() -> Check {
    let t0 = Instant::now();
    let mut mismatched = Vec::new();
    for name in HDBSCAN_FIXTURES {
        let (data, dim, labels, params) = hdbscan_fixture(name)?;
        let result = cluster(Points::new(&data, dim)?, &params)?;
        if !same_partition(&result.labels, &labels) {
            mismatched.push(name);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_mst: f64 = 0.0;
    for (n, dim, k) in [(30, 2, 3), (100, 3, 5), (200, 2, 10), (200, 8, 25)] {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let points = Points::new(&data, dim)?;
        let core = core_distances(points, k);
        let prim: f64 = mutual_reachability_mst(points, &core).iter().map(|e| e.weight).sum();
        let brute = kruskal_weight(points, &core);
        worst_mst = worst_mst.max((prim - brute).abs() / brute);
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        mismatched.is_empty() && worst_mst < 1e-12 && secs < 30.0,
        format!(
            "{}/5 fixtures agree{}; MST rel diff {worst_mst:.1e}; {secs:.1}s (< 30s)",
            5 - mismatched.len(),
            if mismatched.is_empty() { String::new() } else { format!(" (mismatch: {})", mismatched.join(", ")) }
        ),
    ))
}

// ----------------------------------------------------------------- sampling

fn sampling_statistics() -> Check {
    let e = std::f64::consts::E;
    let areas = [e - 1.0, e.powi(3) - 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 1_000_000;
    let small = (0..draws).filter(|_| choose_mask(&areas, rng.gen()) == 0).count();
    // weights 1/ln(e) : 1/ln(e^3) = 3 : 1
    let ratio = small as f64 / (draws - small) as f64;
    let ratio_ok = (ratio - 3.0).abs() <= 0.02 * 3.0;

    // within an image, rays whose pixels share a membership list share a mask
    let ds = dataset()?;
    let pool = PixelPool::new(&ds);
    let cfg = SamplingConfig {
        densify: false,
        ..SamplingConfig::default()
    };
    let (_, normalizer) = prepare_field(&ds, FieldConfig::default())?;
    let (mut groups, mut disagreements) = (0usize, 0usize);
    for _ in 0..20 {
        let b = sample_batch(&ds, &pool, &cfg, &normalizer, &mut rng)?;
        for r in &b.image_ranges {
            let mut chosen: HashMap<&[u32], u32> = HashMap::new();
            for i in r.clone() {
                let members = ds.views[b.view[i] as usize].membership.of(b.pixel[i] as usize);
                match chosen.get(members) {
                    Some(&m) if m != b.mask[i] => disagreements += 1,
                    Some(_) => {}
                    None => {
                        groups += 1;
                        chosen.insert(members, b.mask[i]);
                    }
                }
            }
        }
    }
    Ok((
        ratio_ok && disagreements == 0,
        format!(
            "small:large ratio {ratio:.4} (3.0 +/- 2%); {disagreements} disagreements across {groups} shared membership lists"
        ),
    ))
}

// ------------------------------------------------------------- end to end

fn end_to_end(full: &Run, elapsed: Duration) -> Check {
    let r = &full.report;
    let mut ok = elapsed.as_secs_f64() <= 15.0 * 60.0 && r.recall_mean >= 0.85;
    let mut parts = Vec::new();
    for l in &r.levels {
        ok &= l.ari >= 0.9 && l.completeness_mean >= 0.85;
        parts.push(format!("L{} ARI {:.3} compl {:.3}", l.level, l.ari, l.completeness_mean));
    }
    Ok((
        ok,
        format!(
            "{}; recall {:.3}; tree {} nodes; {:.0}s (ARI >= 0.9, completeness >= 0.85, recall >= 0.85, <= 900s)",
            parts.join(", "),
            r.recall_mean,
            full.tree.nodes.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn ablation(ds: &Dataset, full: &Run, full_elapsed: Duration) -> Check {
    let no_scale = run(ds, Variant::NO_SCALE)?;
    let no_densify = run(ds, Variant::NO_DENSIFY)?;
    let total = full_elapsed + no_scale.elapsed + no_densify.elapsed;
    let base = full.report.recall_mean;
    let d_scale = base - no_scale.report.recall_mean;
    let d_dens = base - no_densify.report.recall_mean;
    Ok((
        d_scale >= 0.05 && d_dens >= 0.05 && total.as_secs_f64() <= 30.0 * 60.0,
        format!(
            "recall full {base:.3}, no scale conditioning {:.3} (drop {d_scale:.3}), no densification {:.3} (drop {d_dens:.3}); {:.0}s for three runs (drop >= 0.05, <= 1800s)",
            no_scale.report.recall_mean,
            no_densify.report.recall_mean,
            total.as_secs_f64()
        ),
    ))
}

// -------------------------------------------------------------- containment

fn containment(ds: &Dataset, model: &AffinityField<f32>) -> Check {
    let points = ds.points_f64().ok_or("no points")?;
    let gt = ds.gt_labels.as_ref().ok_or("no ground truth")?;
    let margin = TrainConfig::default().margin;
    // five scales evenly spaced in normalized scale
    let grid: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&u| model.normalizer.inverse(u)).collect();
    let feats = PointFeatures::new(model, &points)?;
    let per_scale: Vec<Array2<f32>> = grid.iter().map(|&s| feats.all(s)).collect::<std::result::Result<_, _>>()?;
    let dist = |k: usize, i: usize, j: usize| -> f64 {
        let f = &per_scale[k];
        f.row(i).iter().zip(f.row(j)).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt()
    };

    // a pair is grouped at s when selection at s would take both points
    let grouped_below = (2.0 - 2.0 * EVAL_THRESHOLD).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut grouped, mut kept) = (0usize, 0usize);
    // the same count with the margin itself as the grouping cut, for reference
    let (mut loose, mut loose_kept) = (0usize, 0usize);
    for _ in 0..5000 {
        let level = rng.gen_range(0..gt.len());
        let i = rng.gen_range(0..points.len());
        let mates: Vec<usize> = (0..points.len()).filter(|&j| j != i && gt[level][j] == gt[level][i]).collect();
        let Some(&j) = mates.choose(&mut rng) else { continue };
        let holds_from = |k0: usize| (k0 + 1..grid.len()).all(|k| dist(k, i, j) < margin);
        if let Some(first) = (0..grid.len()).find(|&k| dist(k, i, j) < grouped_below) {
            grouped += 1;
            kept += holds_from(first) as usize;
        }
        if let Some(first) = (0..grid.len()).find(|&k| dist(k, i, j) < margin) {
            loose += 1;
            loose_kept += holds_from(first) as usize;
        }
    }
    let frac = kept as f64 / grouped.max(1) as f64;
    Ok((
        grouped > 0 && frac >= 0.95,
        format!(
            "{kept}/{grouped} same-group pairs stay within the margin at every larger scale ({:.1}%, >= 95%); with the margin as grouping cut {loose_kept}/{loose}; grid {:?}",
            100.0 * frac,
            grid.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    ))
}

// -------------------------------------------------------------- determinism

fn tiny_artifacts() -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let spec = HierSpec {
        branching: vec![3, 2],
        spread: vec![0.3, 0.1],
        points_per_leaf: 60,
        layout_radius: 0.8,
        seed: 3,
        ..HierSpec::default()
    };
    let rig = CameraRig {
        n_views: 8,
        width: 128,
        height: 128,
        ..CameraRig::default()
    };
    let scene = generate_scene(&spec, &rig)?;
    let mut ds = Dataset::from_scene(&scene, &LevelMix::default())?;
    assign_all(&mut ds, ScaleStatistic::StdNorm)?;
    let field = FieldConfig {
        n_levels: 6,
        hashmap_size_log2: 12,
        base_resolution: 4,
        max_resolution: 64,
        mlp_layers: 2,
        mlp_width: 32,
        out_dim: 8,
        seed: 1,
        ..FieldConfig::default()
    };
    let mut tc = TrainConfig {
        steps: 300,
        seed: 1,
        ..TrainConfig::default()
    };
    tc.sampling.images_per_batch = 4;
    tc.sampling.rays_per_image = 64;
    let (model, _) = train(&ds, field, tc, |_| {})?;
    let points = ds.points_f64().ok_or("no points")?;
    let params = DecomposeParams {
        min_cluster_size: 15,
        ..DecomposeParams::default()
    };
    let tree = build_tree(&model, &points, &params)?;
    let gt = ds.gt_labels.as_ref().ok_or("no ground truth")?;
    let clicks = default_clicks(&points, gt);
    let report = evaluate(
        &Selector::new(&model, &points)?,
        &EvalInputs {
            points: &points,
            gt_labels: gt,
            tree: &tree,
            clicks: &clicks,
            params: &params,
            threshold: EVAL_THRESHOLD,
            click_tolerance: 1e-6,
        },
    )?;
    let positions = ds.points.clone().ok_or("no points")?;
    let (tree_json, sidecar) = tree.to_json_and_sidecar(&positions);
    let mut tree_bytes = serde_json::to_vec(&tree_json)?;
    tree_bytes.extend_from_slice(&sidecar);
    Ok((checkpoint::to_bytes(&model), tree_bytes, serde_json::to_vec(&report)?))
}

fn determinism() -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let a = pool.install(tiny_artifacts)?;
    let b = pool.install(tiny_artifacts)?;
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2];
    Ok((
        same.iter().all(|&s| s),
        format!(
            "checkpoint {} ({} bytes), tree {} ({} bytes), report {} ({} bytes)",
            if same[0] { "identical" } else { "differs" },
            a.0.len(),
            if same[1] { "identical" } else { "differs" },
            a.1.len(),
            if same[2] { "identical" } else { "differs" },
            a.2.len()
        ),
    ))
}
