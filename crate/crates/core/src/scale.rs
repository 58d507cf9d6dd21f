//! Physical mask scales and the quantile normalizer fed to the field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::geometry::{Camera, DepthMap};

#[derive(Debug, Error, PartialEq)]
pub enum ScaleError {
    #[error("mask has no geometry")]
    NoGeometry,
    #[error("view {view} mask {mask_id}: mask has no geometry")]
    MaskNoGeometry { view: usize, mask_id: u32 },
    #[error("need at least 2 distinct scales to fit a normalizer")]
    Degenerate,
    #[error("non-finite scale {0}")]
    NonFinite(f64),
    #[error("camera_extent must be positive, got {0}")]
    Extent(f64),
}

/// How the spread of a mask's deprojected points becomes one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleStatistic {
    /// `2 * ||(std_x, std_y, std_z)||`.
    #[default]
    StdNorm,
    /// Diagonal of the axis-aligned bounding box.
    BboxDiagonal,
}

pub const MAX_DEPROJECTED: usize = 10_000;

/// Lower clamp for assigned scales, as a fraction of the camera extent.
pub const FLOOR_FRACTION: f64 = 1e-4;

/// Scale of a mask from its pixel list (sorted indices) and depth.
pub fn assign_scale(
    pixels: &[u32],
    depth: &DepthMap,
    cam: &Camera,
    camera_extent: f64,
    statistic: ScaleStatistic,
) -> Result<f64, ScaleError> {
    if !(camera_extent > 0.0 && camera_extent.is_finite()) {
        return Err(ScaleError::Extent(camera_extent));
    }
    let valid: Vec<u32> = pixels
        .iter()
        .copied()
        .filter(|&p| depth.get(p as usize).is_some())
        .collect();
    if valid.is_empty() {
        return Err(ScaleError::NoGeometry);
    }
    let take = valid.len().min(MAX_DEPROJECTED);
    let points: Vec<[f64; 3]> = (0..take)
        .map(|k| {
            let p = valid[k * valid.len() / take] as usize;
            let (x, y) = depth.coords(p);
            cam.deproject(x, y, depth.data[p] as f64)
        })
        .collect();
    let raw = spread_of(&points, statistic);
    Ok(raw.clamp(FLOOR_FRACTION * camera_extent, 2.0 * camera_extent))
}

/// Unclamped spread statistic of a point set.
pub fn spread_of(points: &[[f64; 3]], statistic: ScaleStatistic) -> f64 {
    match statistic {
        ScaleStatistic::StdNorm => {
            let n = points.len() as f64;
            let mut var = 0.0;
            for axis in 0..3 {
                let mean = points.iter().map(|p| p[axis]).sum::<f64>() / n;
                var += points.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n;
            }
            2.0 * var.sqrt()
        }
        ScaleStatistic::BboxDiagonal => {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in points {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
        }
    }
}

/// Assign a scale to every mask of every view, in place.
pub fn assign_all(dataset: &mut Dataset, statistic: ScaleStatistic) -> Result<(), ScaleError> {
    let extent = dataset.camera_extent;
    for (vi, view) in dataset.views.iter_mut().enumerate() {
        let scales: Vec<Result<f64, ScaleError>> = view
            .mask_pixels
            .par_iter()
            .map(|px| assign_scale(px, &view.depth, &view.camera, extent, statistic))
            .collect();
        for (mask, s) in view.masks.iter_mut().zip(scales) {
            mask.scale3d = Some(s.map_err(|_| ScaleError::MaskNoGeometry {
                view: vi,
                mask_id: mask.mask_id,
            })?);
        }
    }
    Ok(())
}

pub const DEFAULT_QUANTILES: usize = 1000;
const BOUNDS_THRESHOLD: f64 = 1e-7;

/// Empirical-CDF map of mask scales onto `[0, 1]`, with the same reference
/// quantiles, interpolation and bound handling as a uniform-output quantile
/// transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleNormalizer {
    pub quantiles: Vec<f64>,
    pub references: Vec<f64>,
    pub s_cap: f64,
}

/// Linear-interpolation percentile of sorted data at fraction `q`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Piecewise-linear interpolation with flat extrapolation; with repeated
/// `xp` the rightmost segment start is used.
fn interp(x: f64, xp: &[f64], fp: &[f64]) -> f64 {
    let last = xp.len() - 1;
    if x < xp[0] {
        return fp[0];
    }
    if x >= xp[last] {
        return fp[last];
    }
    let j = xp.partition_point(|&v| v <= x) - 1;
    if xp[j] == x {
        return fp[j];
    }
    let slope = (fp[j + 1] - fp[j]) / (xp[j + 1] - xp[j]);
    slope * (x - xp[j]) + fp[j]
}

impl ScaleNormalizer {
    pub fn fit(scales: &[f64], s_cap: f64) -> Result<Self, ScaleError> {
        Self::fit_with(scales, s_cap, DEFAULT_QUANTILES)
    }

    pub fn fit_with(scales: &[f64], s_cap: f64, n_quantiles: usize) -> Result<Self, ScaleError> {
        if let Some(&bad) = scales.iter().find(|s| !s.is_finite()) {
            return Err(ScaleError::NonFinite(bad));
        }
        let mut sorted = scales.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
            return Err(ScaleError::Degenerate);
        }
        let nq = n_quantiles.min(sorted.len()).max(2);
        let references: Vec<f64> = (0..nq).map(|i| i as f64 / (nq - 1) as f64).collect();
        let mut quantiles: Vec<f64> = references.iter().map(|&q| percentile(&sorted, q)).collect();
        for i in 1..nq {
            quantiles[i] = quantiles[i].max(quantiles[i - 1]);
        }
        Ok(Self {
            quantiles,
            references,
            s_cap,
        })
    }

    /// Map a raw scale into `[0, 1]`.
    pub fn transform(&self, s: f64) -> f64 {
        let q = &self.quantiles;
        let (lo, hi) = (q[0], q[q.len() - 1]);
        if s - BOUNDS_THRESHOLD < lo {
            return 0.0;
        }
        if s + BOUNDS_THRESHOLD > hi {
            return 1.0;
        }
        let neg_q: Vec<f64> = q.iter().rev().map(|v| -v).collect();
        let neg_r: Vec<f64> = self.references.iter().rev().map(|v| -v).collect();
        0.5 * (interp(s, q, &self.references) - interp(-s, &neg_q, &neg_r))
    }

    /// Raw scale whose transform is `u`, for `u` in `[0, 1]`.
    pub fn inverse(&self, u: f64) -> f64 {
        interp(u.clamp(0.0, 1.0), &self.references, &self.quantiles)
    }

    /// Transform after capping at `s_cap`; this is what the field consumes.
    pub fn normalize(&self, s: f64) -> f64 {
        self.transform(s.min(self.s_cap))
    }
}
