//! The scene, field and training setup shared by the acceptance checks.

use std::error::Error;
use std::time::{Duration, Instant};

use groupfield::dataset::Dataset;
use groupfield::decompose::{build_tree, DecomposeParams, Selector};
use groupfield::eval::{default_clicks, evaluate, EvalInputs, EvalReport};
use groupfield::field::{AffinityField, FieldConfig};
use groupfield::scale::{assign_all, ScaleStatistic};
use groupfield::synth::{generate_scene, CameraRig, HierSpec, LevelMix};
use groupfield::train::{train, TrainConfig};
use groupfield::tree::GroupTree;

pub type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

pub const EVAL_THRESHOLD: f64 = 0.9;

/// Which parts of the supervision are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub scale_conditioned: bool,
    pub densify: bool,
}

impl Variant {
    pub const FULL: Self = Self {
        scale_conditioned: true,
        densify: true,
    };
    pub const NO_SCALE: Self = Self {
        scale_conditioned: false,
        densify: true,
    };
    pub const NO_DENSIFY: Self = Self {
        scale_conditioned: true,
        densify: false,
    };
}

/// 4 clusters x 3 objects x 3 parts, 170 points per part.
pub fn scene_spec() -> HierSpec {
    HierSpec::default()
}

/// 20 views, 10% corrupted masks.
pub fn dataset() -> Result<Dataset> {
    let scene = generate_scene(&scene_spec(), &CameraRig::default())?;
    let mut ds = Dataset::from_scene(&scene, &LevelMix::default())?;
    assign_all(&mut ds, ScaleStatistic::StdNorm)?;
    Ok(ds)
}

/// Smaller than the default field, sized for a laptop CPU.
pub fn field_config(v: Variant) -> FieldConfig {
    FieldConfig {
        n_levels: 12,
        hashmap_size_log2: 15,
        base_resolution: 8,
        max_resolution: 256,
        mlp_width: 64,
        out_dim: 32,
        scale_conditioned: v.scale_conditioned,
        ..FieldConfig::default()
    }
}

pub fn train_config(v: Variant) -> TrainConfig {
    let mut cfg = TrainConfig {
        steps: 3000,
        ..TrainConfig::default()
    };
    cfg.sampling.rays_per_image = 128;
    cfg.sampling.densify = v.densify;
    cfg
}

pub struct Run {
    pub model: AffinityField<f32>,
    pub tree: GroupTree,
    pub report: EvalReport,
    pub elapsed: Duration,
}

/// Train, decompose and evaluate one variant on `ds`.
pub fn run(ds: &Dataset, v: Variant) -> Result<Run> {
    let t0 = Instant::now();
    let (model, _) = train(ds, field_config(v), train_config(v), |_| {})?;
    let points = ds.points_f64().ok_or("dataset has no points")?;
    let gt = ds.gt_labels.as_ref().ok_or("dataset has no ground truth")?;
    let params = DecomposeParams::default();
    let tree = build_tree(&model, &points, &params)?;
    let selector = Selector::new(&model, &points)?;
    let clicks = default_clicks(&points, gt);
    let report = evaluate(
        &selector,
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
    Ok(Run {
        model,
        tree,
        report,
        elapsed: t0.elapsed(),
    })
}
