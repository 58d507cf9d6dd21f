//! One function per subcommand. Each reads its inputs from disk, runs the
//! stage and writes its artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use groupfield::dataset::{read_dataset, write_dataset, write_mask_meta, Dataset, DatasetManifest};
use groupfield::decompose::{build_tree, Selector};
use groupfield::eval::{default_clicks, evaluate, EvalInputs, EvalReport, RuntimeStats};
use groupfield::field::{checkpoint, AffinityField};
use groupfield::scale::{assign_all, ScaleNormalizer};
use groupfield::synth::generate_scene;
use groupfield::train::{train as train_field, StepLog};
use groupfield::tree::GroupTree;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{require, CliError};

pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const CONFIG_FILE: &str = "run.toml";

/// The tree's point sidecar sits next to its JSON with a `.bin` extension.
pub fn sidecar_path(tree_json: &Path) -> PathBuf {
    tree_json.with_extension("bin")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    write_bytes(path, &bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    require(dir)?;
    require(&dir.join("manifest.json"))?;
    Ok(read_dataset(dir)?)
}

pub fn load_model(path: &Path) -> Result<AffinityField<f32>, CliError> {
    require(path)?;
    Ok(checkpoint::load::<f32>(path)?)
}

pub fn load_tree(path: &Path) -> Result<(GroupTree, Vec<[f32; 3]>), CliError> {
    require(path)?;
    let side = sidecar_path(path);
    require(&side)?;
    Ok(GroupTree::read(path, &side)?)
}

pub fn points_of(ds: &Dataset) -> Result<Vec<[f64; 3]>, CliError> {
    ds.points_f64()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| CliError::Input("dataset has no point cloud (points.bin)".into()))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest, CliError> {
    let scene = generate_scene(&cfg.synth, &cfg.cameras)?;
    let ds = Dataset::from_scene(&scene, &cfg.masks)?;
    let manifest = write_dataset(&ds, out)?;
    write_bytes(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    info!(
        "wrote {} views, {} masks, {} points to {}",
        ds.views.len(),
        ds.mask_count(),
        ds.points.as_ref().map_or(0, |p| p.len()),
        out.display()
    );
    Ok(manifest)
}

pub fn scales(cfg: &RunConfig, data: &Path) -> Result<ScaleNormalizer, CliError> {
    let mut ds = load_dataset(data)?;
    assign_all(&mut ds, cfg.scales.statistic)?;
    write_mask_meta(&ds, data)?;
    let normalizer = ScaleNormalizer::fit(&ds.all_scales(), 2.0 * ds.camera_extent)?;
    write_json(&data.join(NORMALIZER_FILE), &normalizer)?;
    info!("assigned {} mask scales", ds.all_scales().len());
    Ok(normalizer)
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path, metrics: Option<&Path>) -> Result<Vec<StepLog>, CliError> {
    let ds = load_dataset(data)?;
    if ds.all_scales().is_empty() {
        return Err(CliError::Input(format!(
            "no mask in {} has a scale; run `groupfield scales` first",
            data.display()
        )));
    }
    let mut sink = match metrics {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
            }
            Some((p, BufWriter::new(fs::File::create(p).map_err(|e| CliError::write(p, e))?)))
        }
        None => None,
    };
    let mut write_err = None;
    let (model, logs) = train_field(&ds, cfg.field.clone(), cfg.train.clone(), |l| {
        info!("step {} loss {:.5} ({} pairs)", l.step, l.loss, l.pairs);
        if let Some((p, w)) = sink.as_mut() {
            let line = serde_json::to_string(l).unwrap_or_default();
            if let Err(e) = writeln!(w, "{line}") {
                write_err.get_or_insert(CliError::write(p, e));
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some((p, mut w)) = sink {
        w.flush().map_err(|e| CliError::write(p, e))?;
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    checkpoint::save(&model, out)?;
    info!("saved checkpoint to {}", out.display());
    Ok(logs)
}

pub fn decompose(cfg: &RunConfig, data: &Path, ckpt: &Path, out: &Path) -> Result<GroupTree, CliError> {
    let ds = load_dataset(data)?;
    let model = load_model(ckpt)?;
    let points = points_of(&ds)?;
    let t0 = Instant::now();
    let tree = build_tree(&model, &points, &cfg.decompose)?;
    info!(
        "tree with {} nodes, depth {}, in {:.1}s",
        tree.nodes.len(),
        tree.max_depth(),
        t0.elapsed().as_secs_f64()
    );
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    let positions = ds.points.clone().unwrap_or_default();
    tree.write(&positions, out, &sidecar_path(out))?;
    Ok(tree)
}

/// Writes `out` (JSON), `out` with `.md` (table) and `out` with
/// `.runtime.json` (wall-clock, kept apart so the report is reproducible).
pub fn eval(cfg: &RunConfig, data: &Path, ckpt: &Path, tree_path: &Path, out: &Path) -> Result<EvalReport, CliError> {
    let ds = load_dataset(data)?;
    let model = load_model(ckpt)?;
    let (tree, _) = load_tree(tree_path)?;
    let points = points_of(&ds)?;
    let gt = ds
        .gt_labels
        .clone()
        .ok_or_else(|| CliError::Input("dataset has no ground-truth labels to evaluate against".into()))?;
    let t0 = Instant::now();
    let selector = Selector::new(&model, &points)?;
    let clicks = default_clicks(&points, &gt);
    let report = evaluate(
        &selector,
        &EvalInputs {
            points: &points,
            gt_labels: &gt,
            tree: &tree,
            clicks: &clicks,
            params: &cfg.decompose,
            threshold: cfg.eval.threshold,
            click_tolerance: cfg.eval.click_tolerance,
        },
    )?;
    let runtime = RuntimeStats {
        eval_ms: Some(t0.elapsed().as_secs_f64() * 1e3),
        ..RuntimeStats::default()
    };
    write_json(out, &report)?;
    write_bytes(&out.with_extension("md"), report.to_markdown().as_bytes())?;
    write_json(&out.with_extension("runtime.json"), &runtime)?;
    info!("recall mean {:.4}", report.recall_mean);
    Ok(report)
}
