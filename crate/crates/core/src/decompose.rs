//! Recursive scale-descending clustering of a point set into a group tree,
//! plus click-and-scale group selection.

use std::borrow::Cow;
use std::collections::HashMap;

use hdbscan::{cluster, ClusterParams, HdbscanError, Points, NOISE};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{AffinityField, EncodedRays, FieldError, Real};
use crate::tree::{GroupTree, TreeNode};

const CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Cluster(#[from] HdbscanError),
    #[error("invalid decomposition parameters: {0}")]
    Params(String),
    #[error("no points to decompose")]
    NoPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeParams {
    pub s_max: f64,
    pub scale_step: f64,
    /// Voxel edge as a fraction of the scale being clustered.
    pub downsample_factor: f64,
    pub min_cluster_size: usize,
    pub min_samples: Option<usize>,
    pub cluster_selection_epsilon: f64,
    /// Let a node come back as one cluster, which is what stops the descent.
    pub allow_single_cluster: bool,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        let c = ClusterParams::default();
        Self {
            s_max: 1.0,
            scale_step: 0.05,
            downsample_factor: 0.01,
            min_cluster_size: c.min_cluster_size,
            min_samples: c.min_samples,
            cluster_selection_epsilon: c.cluster_selection_epsilon,
            allow_single_cluster: true,
        }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        let bad = |m: String| Err(DecomposeError::Params(m));
        if !(self.scale_step > 0.0 && self.scale_step < self.s_max && self.s_max.is_finite()) {
            return bad(format!("need 0 < scale_step < s_max, got {} and {}", self.scale_step, self.s_max));
        }
        if !(self.downsample_factor >= 0.0 && self.downsample_factor.is_finite()) {
            return bad(format!("downsample_factor must be >= 0, got {}", self.downsample_factor));
        }
        if self.min_cluster_size < 2 {
            return bad(format!("min_cluster_size must be >= 2, got {}", self.min_cluster_size));
        }
        Ok(())
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            min_cluster_size: self.min_cluster_size,
            min_samples: self.min_samples,
            cluster_selection_epsilon: self.cluster_selection_epsilon,
            allow_single_cluster: self.allow_single_cluster,
        }
    }

    /// `s_max, s_max - step, ..., 0`.
    pub fn descending_scales(&self) -> Vec<f64> {
        let mut v: Vec<f64> = scale_grid(self.s_max, self.scale_step);
        v.reverse();
        v
    }
}

/// `0, step, 2 step, ...` up to and including `s_max`.
pub fn scale_grid(s_max: f64, step: f64) -> Vec<f64> {
    let k = (s_max / step - 1e-9).ceil() as usize;
    (0..=k).map(|i| (i as f64 * step).min(s_max)).collect()
}

/// Hash features of a fixed point set, encoded once and evaluated at any scale.
pub struct PointFeatures<'a, R: Real> {
    model: &'a AffinityField<R>,
    positions: &'a [[f64; 3]],
    chunks: Cow<'a, [EncodedRays<R>]>,
}

impl<'a, R: Real> PointFeatures<'a, R> {
    pub fn new(model: &'a AffinityField<R>, positions: &'a [[f64; 3]]) -> Result<Self, DecomposeError> {
        Ok(Self {
            model,
            positions,
            chunks: Cow::Owned(model.encode_points_batch(positions)?),
        })
    }

    /// Reuse encodings from [`AffinityField::encode_points_batch`] on the same points.
    pub fn with_encoded(model: &'a AffinityField<R>, positions: &'a [[f64; 3]], chunks: &'a [EncodedRays<R>]) -> Self {
        Self {
            model,
            positions,
            chunks: Cow::Borrowed(chunks),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        self.positions
    }

    /// Unit features of every point at scale `s`.
    pub fn all(&self, s: f64) -> Result<Array2<R>, DecomposeError> {
        Ok(self.model.query_encoded(&self.chunks, s)?)
    }

    /// Features of the given points at `s`, flattened row-major in `f64`.
    pub fn rows(&self, rows: &[usize], s: f64) -> Result<Vec<f64>, DecomposeError> {
        let parts: Vec<Vec<f64>> = rows
            .par_chunks(CHUNK)
            .map(|block| {
                let mut by_chunk: Vec<EncodedRays<R>> = Vec::new();
                // rows are grouped by encoding chunk to keep selection cheap
                let mut start = 0;
                while start < block.len() {
                    let c = block[start] / CHUNK;
                    let mut end = start;
                    while end < block.len() && block[end] / CHUNK == c {
                        end += 1;
                    }
                    let local: Vec<usize> = block[start..end].iter().map(|r| r % CHUNK).collect();
                    by_chunk.push(self.chunks[c].select(&local));
                    start = end;
                }
                let enc = EncodedRays::concat(&by_chunk);
                let pass = self.model.head_forward(&enc, &vec![s; enc.len()])?;
                Ok(pass.features.iter().map(|v| v.as_f64()).collect())
            })
            .collect::<Result<_, FieldError>>()?;
        Ok(parts.concat())
    }
}

/// Give every noise point the label of its nearest non-noise point; ties go
/// to the lower label. Returns `None` when every point is noise.
pub fn reassign_noise(labels: &[i32], positions: &[[f64; 3]]) -> Option<Vec<i32>> {
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
    if members.is_empty() {
        return None;
    }
    let fixed: Vec<i32> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            if l != NOISE {
                return l;
            }
            let mut best = (f64::INFINITY, i32::MAX);
            for &j in &members {
                let d = dist2(positions[i], positions[j]);
                if d < best.0 || (d == best.0 && labels[j] < best.1) {
                    best = (d, labels[j]);
                }
            }
            best.1
        })
        .collect();
    Some(fixed)
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Voxel-grid downsampling of `rows`. Returns the representatives (the
/// lowest row of each occupied voxel) and, for every input row, the position
/// in that list of its nearest representative.
pub fn voxel_downsample(positions: &[[f64; 3]], rows: &[usize], voxel: f64) -> (Vec<usize>, Vec<usize>) {
    if !(voxel > 0.0) {
        return (rows.to_vec(), (0..rows.len()).collect());
    }
    let key = |p: [f64; 3]| -> [i64; 3] { [0, 1, 2].map(|a| (p[a] / voxel).floor() as i64) };
    let mut grid: HashMap<[i64; 3], usize> = HashMap::new();
    let mut reps = Vec::new();
    for &r in rows {
        grid.entry(key(positions[r])).or_insert_with(|| {
            reps.push(r);
            reps.len() - 1
        });
    }
    // a point's own representative is within sqrt(3) voxels, so every closer
    // one lies within two voxels per axis
    let assign = rows
        .iter()
        .map(|&r| {
            let p = positions[r];
            let k = key(p);
            let mut best = (f64::INFINITY, usize::MAX);
            for dx in -2..=2 {
                for dy in -2..=2 {
                    for dz in -2..=2 {
                        if let Some(&ri) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            let d = dist2(p, positions[reps[ri]]);
                            if d < best.0 || (d == best.0 && reps[ri] < reps[best.1]) {
                                best = (d, ri);
                            }
                        }
                    }
                }
            }
            best.1
        })
        .collect();
    (reps, assign)
}

/// Partition of a point set produced by one clustering call.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Label per point, all non-negative.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

/// Cluster `rows` at scale `s` with voxel downsampling; noise is reattached
/// and labels are propagated back to every row. Fewer than two clusters
/// means no split and gives `None`.
fn split_rows<R: Real>(
    pf: &PointFeatures<'_, R>,
    rows: &[usize],
    s: f64,
    voxel: f64,
    params: &ClusterParams,
) -> Result<Option<Partition>, DecomposeError> {
    if rows.len() < params.min_cluster_size {
        return Ok(None);
    }
    let (reps, assign) = voxel_downsample(pf.positions, rows, voxel);
    if reps.len() < params.min_cluster_size {
        return Ok(None);
    }
    let feats = pf.rows(&reps, s)?;
    let result = cluster(Points::new(&feats, pf.model.out_dim())?, params)?;
    if result.n_clusters < 2 {
        return Ok(None);
    }
    let rep_pos: Vec<[f64; 3]> = reps.iter().map(|&r| pf.positions[r]).collect();
    let Some(fixed) = reassign_noise(&result.labels, &rep_pos) else {
        return Ok(None);
    };
    Ok(Some(Partition {
        labels: assign.iter().map(|&a| fixed[a] as usize).collect(),
        n_clusters: result.n_clusters,
    }))
}

/// Cluster all points at scale `s`. Degenerate features give one cluster.
pub fn global_cluster<R: Real>(
    model: &AffinityField<R>,
    points: &[[f64; 3]],
    s: f64,
    params: &DecomposeParams,
) -> Result<Partition, DecomposeError> {
    if points.is_empty() {
        return Err(DecomposeError::NoPoints);
    }
    let pf = PointFeatures::new(model, points)?;
    let rows: Vec<usize> = (0..points.len()).collect();
    let part = split_rows(&pf, &rows, s, 0.0, &params.cluster_params())?;
    Ok(part.unwrap_or(Partition {
        labels: vec![0; points.len()],
        n_clusters: 1,
    }))
}

struct Subtree {
    points: Vec<usize>,
    scale: f64,
    children: Vec<Subtree>,
}

fn groups_of(rows: &[usize], part: &Partition) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); part.n_clusters];
    for (&r, &l) in rows.iter().zip(&part.labels) {
        groups[l].push(r);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

fn descend<R: Real>(
    pf: &PointFeatures<'_, R>,
    rows: &[usize],
    scales: &[f64],
    params: &DecomposeParams,
    cp: &ClusterParams,
) -> Result<Vec<Subtree>, DecomposeError> {
    for (k, &s) in scales.iter().enumerate() {
        let Some(part) = split_rows(pf, rows, s, params.downsample_factor * s, cp)? else {
            continue;
        };
        let groups = groups_of(rows, &part);
        if groups.len() < 2 {
            continue;
        }
        return groups
            .into_par_iter()
            .map(|g| {
                let children = descend(pf, &g, &scales[k + 1..], params, cp)?;
                Ok(Subtree {
                    points: g,
                    scale: s,
                    children,
                })
            })
            .collect();
    }
    Ok(Vec::new())
}

fn flatten(sub: Subtree, parent: Option<usize>, out: &mut Vec<TreeNode>) -> usize {
    let id = out.len();
    out.push(TreeNode {
        id,
        parent,
        children: Vec::new(),
        points: sub.points.iter().map(|&p| p as u32).collect(),
        split_scale: sub.scale,
    });
    for child in sub.children {
        let c = flatten(child, Some(id), out);
        out[id].children.push(c);
    }
    id
}

/// Greedy depth-first tree: cluster globally at `s_max`, then walk each node
/// down the scale grid until it splits, recursing into the parts.
pub fn build_tree<R: Real>(
    model: &AffinityField<R>,
    points: &[[f64; 3]],
    params: &DecomposeParams,
) -> Result<GroupTree, DecomposeError> {
    params.validate()?;
    if points.is_empty() {
        return Err(DecomposeError::NoPoints);
    }
    let pf = PointFeatures::new(model, points)?;
    let scales = params.descending_scales();
    let cp = params.cluster_params();
    let all: Vec<usize> = (0..points.len()).collect();
    let s_max = scales[0];
    let top = match split_rows(&pf, &all, s_max, params.downsample_factor * s_max, &cp)? {
        Some(part) if part.n_clusters >= 2 => groups_of(&all, &part),
        _ => vec![all],
    };
    let subs: Vec<Subtree> = top
        .into_par_iter()
        .map(|g| {
            let children = descend(&pf, &g, &scales[1..], params, &cp)?;
            Ok(Subtree {
                points: g,
                scale: s_max,
                children,
            })
        })
        .collect::<Result<_, DecomposeError>>()?;
    let mut tree = GroupTree::default();
    for sub in subs {
        let id = flatten(sub, None, &mut tree.nodes);
        tree.roots.push(id);
    }
    tree.prune_chains();
    Ok(tree)
}

pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Read-only click selection over a fixed point set.
pub struct Selector<'a, R: Real> {
    features: PointFeatures<'a, R>,
}

impl<'a, R: Real> Selector<'a, R> {
    pub fn new(model: &'a AffinityField<R>, points: &'a [[f64; 3]]) -> Result<Self, DecomposeError> {
        Ok(Self {
            features: PointFeatures::new(model, points)?,
        })
    }

    pub fn with_encoded(model: &'a AffinityField<R>, points: &'a [[f64; 3]], chunks: &'a [EncodedRays<R>]) -> Self {
        Self {
            features: PointFeatures::with_encoded(model, points, chunks),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Points whose feature has cosine similarity `>= threshold` with the click's.
    pub fn select(&self, click: [f64; 3], s: f64, threshold: f64) -> Result<Vec<u32>, DecomposeError> {
        let c: Vec<f64> = self.features.model.query(click, s)?.iter().map(|v| v.as_f64()).collect();
        let all = self.features.all(s)?;
        Ok(all
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, row)| row.iter().zip(&c).map(|(a, b)| a.as_f64() * b).sum::<f64>() >= threshold)
            .map(|(i, _)| i as u32)
            .collect())
    }

    /// Selections at `0, step, ..., s_max`, dropping any mask whose IoU with
    /// the last kept one exceeds 0.95.
    pub fn multiscale(
        &self,
        click: [f64; 3],
        s_max: f64,
        step: f64,
        threshold: f64,
    ) -> Result<Vec<(f64, Vec<u32>)>, DecomposeError> {
        if !(step > 0.0 && s_max >= 0.0) {
            return Err(DecomposeError::Params(format!("bad scale grid: step {step}, s_max {s_max}")));
        }
        let mut out: Vec<(f64, Vec<u32>)> = Vec::new();
        for s in scale_grid(s_max, step) {
            let sel = self.select(click, s, threshold)?;
            if let Some((_, last)) = out.last() {
                if crate::eval::miou(last, &sel) > 0.95 {
                    continue;
                }
            }
            out.push((s, sel));
        }
        Ok(out)
    }
}

pub fn select_group<R: Real>(
    model: &AffinityField<R>,
    points: &[[f64; 3]],
    click: [f64; 3],
    s: f64,
    threshold: f64,
) -> Result<Vec<u32>, DecomposeError> {
    Selector::new(model, points)?.select(click, s, threshold)
}

pub fn multiscale_masks<R: Real>(
    model: &AffinityField<R>,
    points: &[[f64; 3]],
    click: [f64; 3],
    params: &DecomposeParams,
    threshold: f64,
) -> Result<Vec<(f64, Vec<u32>)>, DecomposeError> {
    Selector::new(model, points)?.multiscale(click, params.s_max, params.scale_step, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_grids_include_both_ends() {
        let g = scale_grid(1.0, 0.05);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[20], 1.0);
        assert_eq!(scale_grid(0.12, 0.05), vec![0.0, 0.05, 0.1, 0.12]);
        let d = DecomposeParams::default().descending_scales();
        assert_eq!((d[0], d[20]), (1.0, 0.0));
    }

    #[test]
    fn noise_tie_goes_to_lower_label() {
        let labels = [1, NOISE, 0];
        let pos = [[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(reassign_noise(&labels, &pos), Some(vec![1, 0, 0]));
        assert_eq!(reassign_noise(&[NOISE, NOISE], &pos[..2]), None);
        assert_eq!(reassign_noise(&[0, 1], &pos[..2]), Some(vec![0, 1]));
    }

    #[test]
    fn downsampling_keeps_one_representative_per_voxel() {
        let pos = [[0.01, 0.01, 0.01], [0.02, 0.02, 0.02], [0.5, 0.5, 0.5], [0.09, 0.0, 0.0]];
        let rows = [0, 1, 2, 3];
        let (reps, assign) = voxel_downsample(&pos, &rows, 0.1);
        assert_eq!(reps, vec![0, 2]);
        assert_eq!(assign, vec![0, 0, 1, 0]);
        let (reps, assign) = voxel_downsample(&pos, &rows, 0.0);
        assert_eq!(reps, rows.to_vec());
        assert_eq!(assign, vec![0, 1, 2, 3]);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = DecomposeParams {
            scale_step: 2.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
