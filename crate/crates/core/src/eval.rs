//! Mask-overlap metrics against ground-truth groups: completeness of the
//! masks mined from a click, recall of the tree nodes, and ARI per level.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{DecomposeError, DecomposeParams, Selector};
use crate::field::Real;
use crate::tree::GroupTree;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty tree")]
    EmptyTree,
    #[error("ground truth covers {gt} points but the point set has {points}")]
    Mismatch { gt: usize, points: usize },
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
}

/// Intersection over union of two sorted index sets; two empty sets give 1.
pub fn miou(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index of two labelings of the same points.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    let n = a.len() as u64;
    let dense = |l: &[usize]| -> (Vec<usize>, usize) {
        let mut map = std::collections::HashMap::new();
        let v: Vec<usize> = l
            .iter()
            .map(|x| {
                let k = map.len();
                *map.entry(*x).or_insert(k)
            })
            .collect();
        (v, map.len())
    };
    let (da, na) = dense(a);
    let (db, nb) = dense(b);
    let mut table: std::collections::HashMap<(usize, usize), u64> = std::collections::HashMap::new();
    let mut ra = vec![0u64; na];
    let mut rb = vec![0u64; nb];
    for (&x, &y) in da.iter().zip(&db) {
        *table.entry((x, y)).or_default() += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let sum_ij: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = ra.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = rb.iter().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both partitions trivial in the same way
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// Sorted member lists per group, per level.
pub fn gt_groups(gt_labels: &[Vec<u32>]) -> Vec<Vec<Vec<u32>>> {
    gt_labels
        .iter()
        .map(|level| {
            let n = level.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
            let mut groups = vec![Vec::new(); n];
            for (i, &l) in level.iter().enumerate() {
                groups[l as usize].push(i as u32);
            }
            groups
        })
        .collect()
}

/// One click per finest-level group: the member closest to the group centroid.
pub fn default_clicks(points: &[[f64; 3]], gt_labels: &[Vec<u32>]) -> Vec<[f64; 3]> {
    let Some(finest) = gt_groups(gt_labels).pop() else {
        return Vec::new();
    };
    finest
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let mut c = [0.0; 3];
            for &i in g {
                (0..3).for_each(|a| c[a] += points[i as usize][a]);
            }
            c.iter_mut().for_each(|v| *v /= g.len() as f64);
            let best = g
                .iter()
                .min_by(|&&i, &&j| dist(points[i as usize], c).total_cmp(&dist(points[j as usize], c)))
                .unwrap();
            points[*best as usize]
        })
        .collect()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessRow {
    pub click: usize,
    pub level: usize,
    pub group: u32,
    pub best_miou: f64,
    pub best_scale: f64,
    pub n_masks: usize,
}

/// Best IoU between the masks mined at a click and the click's ground-truth
/// group, per level. Clicks farther than `tolerance` from every point are
/// skipped; their indices are returned alongside the rows.
pub fn completeness_eval<R: Real>(
    selector: &Selector<'_, R>,
    points: &[[f64; 3]],
    clicks: &[[f64; 3]],
    gt_labels: &[Vec<u32>],
    params: &DecomposeParams,
    threshold: f64,
    tolerance: f64,
) -> Result<(Vec<CompletenessRow>, Vec<usize>), EvalError> {
    for level in gt_labels {
        if level.len() != points.len() {
            return Err(EvalError::Mismatch {
                gt: level.len(),
                points: points.len(),
            });
        }
    }
    let groups = gt_groups(gt_labels);
    let per_click: Vec<Result<Option<Vec<CompletenessRow>>, EvalError>> = clicks
        .par_iter()
        .enumerate()
        .map(|(ci, &click)| {
            let nearest = (0..points.len()).min_by(|&i, &j| dist(points[i], click).total_cmp(&dist(points[j], click)));
            let Some(anchor) = nearest.filter(|&i| dist(points[i], click) <= tolerance) else {
                log::warn!("click {ci} at {click:?} is not on the geometry; skipped");
                return Ok(None);
            };
            let masks = selector.multiscale(click, params.s_max, params.scale_step, threshold)?;
            let rows = gt_labels
                .iter()
                .enumerate()
                .map(|(level, labels)| {
                    let g = labels[anchor];
                    let target = &groups[level][g as usize];
                    let (best_miou, best_scale) = masks
                        .iter()
                        .map(|(s, m)| (miou(m, target), *s))
                        .fold((f64::NEG_INFINITY, 0.0), |b, c| if c.0 > b.0 { c } else { b });
                    CompletenessRow {
                        click: ci,
                        level,
                        group: g,
                        best_miou,
                        best_scale,
                        n_masks: masks.len(),
                    }
                })
                .collect();
            Ok(Some(rows))
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (ci, r) in per_click.into_iter().enumerate() {
        match r? {
            Some(v) => rows.extend(v),
            None => skipped.push(ci),
        }
    }
    Ok((rows, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub level: usize,
    pub group: u32,
    pub size: usize,
    pub best_miou: f64,
    pub best_node: usize,
}

/// Best IoU of each ground-truth group against every tree node.
pub fn recall_eval(tree: &GroupTree, gt_labels: &[Vec<u32>]) -> Result<Vec<RecallRow>, EvalError> {
    if tree.is_empty() {
        return Err(EvalError::EmptyTree);
    }
    let groups = gt_groups(gt_labels);
    let mut rows = Vec::new();
    for (level, gs) in groups.iter().enumerate() {
        let level_rows: Vec<RecallRow> = gs
            .par_iter()
            .enumerate()
            .filter(|(_, members)| !members.is_empty())
            .map(|(g, members)| {
                let (best_node, best_miou) = tree
                    .nodes
                    .iter()
                    .map(|n| (n.id, miou(&n.points, members)))
                    .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
                RecallRow {
                    level,
                    group: g as u32,
                    size: members.len(),
                    best_miou,
                    best_node,
                }
            })
            .collect();
        rows.extend(level_rows);
    }
    Ok(rows)
}

/// Flat labeling from the deepest node that passes `keep`; uncovered points
/// share one extra label.
fn cut<F: Fn(usize) -> bool>(tree: &GroupTree, n_points: usize, keep: F) -> Vec<usize> {
    let mut labels = vec![usize::MAX; n_points];
    // preorder ids: parents are visited before their children
    for n in &tree.nodes {
        if keep(n.id) {
            for &p in &n.points {
                labels[p as usize] = n.id;
            }
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriRow {
    pub level: usize,
    pub ari: f64,
    /// The cut that matched best, e.g. `depth 1` or `scale 0.35`.
    pub cut: String,
}

/// ARI of each ground-truth level against the best tree cut, taken over
/// every depth and every split scale.
pub fn ari_per_level(tree: &GroupTree, gt_labels: &[Vec<u32>]) -> Vec<AriRow> {
    let n = gt_labels.first().map_or(0, |l| l.len());
    let depths: Vec<usize> = (0..tree.nodes.len()).map(|i| tree.depth(i)).collect();
    let mut cuts: Vec<(String, Vec<usize>)> = (0..=tree.max_depth())
        .map(|d| (format!("depth {d}"), cut(tree, n, |i| depths[i] <= d)))
        .collect();
    let mut scales: Vec<f64> = tree.nodes.iter().map(|n| n.split_scale).collect();
    scales.sort_by(|a, b| b.total_cmp(a));
    scales.dedup();
    for t in scales {
        cuts.push((format!("scale {t:.2}"), cut(tree, n, |i| tree.nodes[i].split_scale >= t)));
    }
    gt_labels
        .iter()
        .enumerate()
        .map(|(level, gt)| {
            let gt: Vec<usize> = gt.iter().map(|&l| l as usize).collect();
            let scored: Vec<(f64, &String)> = cuts.par_iter().map(|(name, l)| (ari(l, &gt), name)).collect();
            let best = scored
                .into_iter()
                .fold((f64::NEG_INFINITY, None), |b, (a, name)| if a > b.0 { (a, Some(name)) } else { b });
            AriRow {
                level,
                ari: best.0,
                cut: best.1.cloned().unwrap_or_default(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub n_groups: usize,
    pub completeness_mean: f64,
    pub recall_mean: f64,
    pub ari: f64,
    pub ari_cut: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub points: usize,
    pub clicks: usize,
    pub skipped_clicks: usize,
    pub mean_masks_per_click: f64,
    pub tree_nodes: usize,
    pub tree_leaves: usize,
    pub tree_depth: usize,
}

/// Everything in here is recomputable from the points, tree and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub levels: Vec<LevelSummary>,
    pub recall_mean: f64,
    pub counts: MaskCounts,
    pub completeness: Vec<CompletenessRow>,
    pub recall: Vec<RecallRow>,
}

/// Wall-clock figures, kept apart from the report so reports stay reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub train_ms: Option<f64>,
    pub decompose_ms: Option<f64>,
    pub eval_ms: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub struct EvalInputs<'a> {
    pub points: &'a [[f64; 3]],
    pub gt_labels: &'a [Vec<u32>],
    pub tree: &'a GroupTree,
    pub clicks: &'a [[f64; 3]],
    pub params: &'a DecomposeParams,
    pub threshold: f64,
    pub click_tolerance: f64,
}

pub fn evaluate<R: Real>(selector: &Selector<'_, R>, inp: &EvalInputs<'_>) -> Result<EvalReport, EvalError> {
    let (completeness, skipped) = completeness_eval(
        selector,
        inp.points,
        inp.clicks,
        inp.gt_labels,
        inp.params,
        inp.threshold,
        inp.click_tolerance,
    )?;
    let recall = recall_eval(inp.tree, inp.gt_labels)?;
    let aris = ari_per_level(inp.tree, inp.gt_labels);
    let groups = gt_groups(inp.gt_labels);
    let levels = aris
        .into_iter()
        .map(|a| LevelSummary {
            level: a.level,
            n_groups: groups[a.level].iter().filter(|g| !g.is_empty()).count(),
            completeness_mean: mean(completeness.iter().filter(|r| r.level == a.level).map(|r| r.best_miou)),
            recall_mean: mean(recall.iter().filter(|r| r.level == a.level).map(|r| r.best_miou)),
            ari: a.ari,
            ari_cut: a.cut,
        })
        .collect();
    let n_levels = inp.gt_labels.len().max(1);
    let counts = MaskCounts {
        points: inp.points.len(),
        clicks: inp.clicks.len(),
        skipped_clicks: skipped.len(),
        mean_masks_per_click: mean(completeness.iter().step_by(n_levels).map(|r| r.n_masks as f64)),
        tree_nodes: inp.tree.nodes.len(),
        tree_leaves: inp.tree.leaves().count(),
        tree_depth: inp.tree.max_depth(),
    };
    Ok(EvalReport {
        threshold: inp.threshold,
        levels,
        recall_mean: mean(recall.iter().map(|r| r.best_miou)),
        counts,
        completeness,
        recall,
    })
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| level | groups | completeness mIoU | recall mIoU | ARI | best cut |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for l in &self.levels {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {:.4} | {} |",
                l.level, l.n_groups, l.completeness_mean, l.recall_mean, l.ari, l.ari_cut
            );
        }
        let c = &self.counts;
        let _ = writeln!(s);
        let _ = writeln!(s, "recall mean over all groups: {:.4}", self.recall_mean);
        let _ = writeln!(
            s,
            "points {}, clicks {} ({} skipped), masks per click {:.2}, tree nodes {} ({} leaves, depth {})",
            c.points, c.clicks, c.skipped_clicks, c.mean_masks_per_click, c.tree_nodes, c.tree_leaves, c.tree_depth
        );
        s
    }
}
