use groupfield::dataset::Dataset;
use groupfield::field::{AffinityField, FieldConfig, Real};
use groupfield::scale::{assign_all, ScaleStatistic};
use groupfield::synth::{generate_scene, CameraRig, HierSpec, LevelMix};
use groupfield::train::gradcheck::{all_params, check_gradients, GradCheck, ParamRef};
use groupfield::train::{loss_and_grad, prepare_field, sample_batch, PixelPool, SamplingConfig, TrainBatch, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> Dataset {
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
    let scene = generate_scene(&spec, &rig).unwrap();
    let mut ds = Dataset::from_scene(&scene, &LevelMix::exact()).unwrap();
    assign_all(&mut ds, ScaleStatistic::StdNorm).unwrap();
    ds
}

fn model<R: Real>(ds: &Dataset, cfg: FieldConfig) -> AffinityField<R> {
    let (cfg, normalizer) = prepare_field(ds, cfg).unwrap();
    AffinityField::new(cfg, normalizer).unwrap()
}

fn batch<R: Real>(ds: &Dataset, m: &AffinityField<R>, images: usize, rays: usize) -> TrainBatch {
    let cfg = SamplingConfig {
        images_per_batch: images,
        rays_per_image: rays,
        ..SamplingConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = sample_batch(ds, &PixelPool::new(ds), &cfg, &m.normalizer, &mut rng).unwrap();
    assert!(b.has_containment());
    b
}

fn worst(checks: &[GradCheck], floor: f64) -> (f64, GradCheck) {
    checks
        .iter()
        .map(|c| (c.rel_err(floor), *c))
        .fold((0.0, checks[0]), |a, b| if b.0 > a.0 { b } else { a })
}

/// Hash entries start near zero where the feature normalisation is badly
/// conditioned for finite differences; 0.1 keeps the check well posed.
fn tiny_config() -> FieldConfig {
    FieldConfig {
        n_levels: 2,
        hashmap_size_log2: 6,
        base_resolution: 2,
        max_resolution: 4,
        mlp_layers: 2,
        mlp_width: 8,
        out_dim: 4,
        init_range: 0.1,
        ..FieldConfig::default()
    }
}

#[test]
fn tiny_f64_gradients_match_central_differences() {
    let ds = dataset();
    let m = model::<f64>(&ds, tiny_config());
    let b = batch(&ds, &m, 3, 6);
    let checks = check_gradients(&m, &b, &TrainConfig::default().loss_weights(), &all_params(&m), 1e-5).unwrap();
    assert!(checks.iter().filter(|c| c.analytic != 0.0).count() > checks.len() / 2);
    let (e, c) = worst(&checks, 1e-9);
    assert!(e < 1e-6, "worst relative error {e:.3e} at {c:?}");
}

#[test]
fn default_f32_gradients_on_sampled_parameters() {
    let ds = dataset();
    let m = model::<f32>(&ds, FieldConfig::default());
    let b = batch(&ds, &m, 2, 8);
    let weights = TrainConfig::default().loss_weights();
    let mut grads = m.zero_grads();
    loss_and_grad(&m, &b, &weights, &mut grads).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (group, g) in grads.slices().iter().enumerate() {
        let touched: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let pick: Vec<ParamRef> = touched.choose_multiple(&mut rng, 30).map(|&index| ParamRef { group, index }).collect();
        // group 0 is the hash table, initialised at 1e-4 scale
        let h = if group == 0 { 1e-7 } else { 1e-5 };
        let checks = check_gradients(&m, &b, &weights, &pick, h).unwrap();
        let (e, c) = worst(&checks, 1e-9);
        assert!(e < 1e-3, "group {group}: worst relative error {e:.3e} at {c:?}");
    }
}
