//! Coordinated per-image ray and mask sampling.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::field::RaySample;
use crate::scale::ScaleNormalizer;

/// `1 / ln(1 + area)` per mask, in the given order.
pub fn mask_weights(areas: &[f64]) -> Vec<f64> {
    areas.iter().map(|&a| 1.0 / (1.0 + a).ln()).collect()
}

/// Normalized cumulative weights; the last entry is exactly 1.
pub fn mask_cdf(areas: &[f64]) -> Vec<f64> {
    let w = mask_weights(areas);
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = w
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    if let Some(last) = cdf.last_mut() {
        *last = 1.0;
    }
    cdf
}

/// Index of the mask picked by `u` in `[0, 1)` from areas sorted ascending.
pub fn choose_mask(areas: &[f64], u: f64) -> usize {
    let cdf = mask_cdf(areas);
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Uniform draw in `[lo, hi]`; `lo` is the next smaller scale (or 0).
pub fn densify_scale(hi: f64, lo: Option<f64>, v: f64) -> f64 {
    let lo = lo.unwrap_or(0.0).min(hi);
    lo + v * (hi - lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub images_per_batch: usize,
    pub rays_per_image: usize,
    /// Interpolate the supervision scale between adjacent mask scales and add
    /// the containment pull at a larger scale.
    pub densify: bool,
    /// Depth offset of the two outer samples along each ray (world units).
    pub sample_spread: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            images_per_batch: 16,
            rays_per_image: 256,
            densify: true,
            sample_spread: 0.004,
        }
    }
}

/// A pair of rays from one image and how they are supervised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLabel {
    pub i: usize,
    pub j: usize,
    pub same_mask: bool,
    pub scale_i: f64,
    pub scale_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub rays: Vec<RaySample>,
    /// Rays of each sampled image are contiguous.
    pub image_ranges: Vec<Range<usize>>,
    pub view: Vec<u32>,
    pub pixel: Vec<u32>,
    /// Chosen mask index within the ray's view.
    pub mask: Vec<u32>,
    /// Supervision scale of each ray.
    pub scale: Vec<f64>,
    /// Larger scale at which the ray's mask group is also pulled together.
    pub contain_scale: Vec<Option<f64>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = PairLabel> + '_ {
        self.image_ranges.iter().flat_map(move |r| {
            let r = r.clone();
            r.clone().flat_map(move |i| {
                (i + 1..r.end).map(move |j| PairLabel {
                    i,
                    j,
                    same_mask: self.mask[i] == self.mask[j],
                    scale_i: self.scale[i],
                    scale_j: self.scale[j],
                })
            })
        })
    }

    /// Containment scales for a second head pass; rays without one reuse
    /// their supervision scale (their gradient is zero).
    pub fn contain_or_train_scales(&self) -> Vec<f64> {
        self.contain_scale
            .iter()
            .zip(&self.scale)
            .map(|(c, &s)| c.unwrap_or(s))
            .collect()
    }

    pub fn has_containment(&self) -> bool {
        self.contain_scale.iter().any(Option::is_some)
    }
}

/// Pixels usable for training in each view: finite depth and at least one mask.
#[derive(Debug, Clone)]
pub struct PixelPool {
    pub per_view: Vec<Vec<u32>>,
}

impl PixelPool {
    pub fn new(dataset: &Dataset) -> Self {
        let per_view = dataset
            .views
            .iter()
            .map(|v| {
                (0..v.camera.pixel_count())
                    .filter(|&p| v.depth.get(p).is_some() && !v.membership.of(p).is_empty())
                    .map(|p| p as u32)
                    .collect()
            })
            .collect();
        Self { per_view }
    }

    pub fn usable_views(&self) -> Vec<usize> {
        (0..self.per_view.len()).filter(|&v| !self.per_view[v].is_empty()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplingError {
    #[error("no view has a pixel with both depth and a mask")]
    NothingToSample,
    #[error("view {view} mask {mask} has no assigned scale")]
    MissingScale { view: usize, mask: usize },
}

fn ray_through(dataset: &Dataset, view: usize, pixel: u32, spread: f64) -> RaySample {
    let v = &dataset.views[view];
    let (x, y) = v.depth.coords(pixel as usize);
    let d = v.depth.data[pixel as usize] as f64;
    let depths = [(d - spread).max(d * 0.5), d, d + spread];
    RaySample {
        positions: depths.iter().map(|&z| v.camera.deproject(x, y, z)).collect(),
        weights: vec![0.25, 0.5, 0.25],
    }
}

/// Draw one training batch. Images are sampled without replacement when
/// possible; rays are uniform over each image's usable pixels.
pub fn sample_batch(
    dataset: &Dataset,
    pool: &PixelPool,
    cfg: &SamplingConfig,
    normalizer: &ScaleNormalizer,
    rng: &mut impl Rng,
) -> Result<TrainBatch, SamplingError> {
    let usable = pool.usable_views();
    if usable.is_empty() {
        return Err(SamplingError::NothingToSample);
    }
    let views: Vec<usize> = if cfg.images_per_batch <= usable.len() {
        index::sample(rng, usable.len(), cfg.images_per_batch)
            .into_iter()
            .map(|k| usable[k])
            .collect()
    } else {
        (0..cfg.images_per_batch).map(|_| usable[rng.gen_range(0..usable.len())]).collect()
    };

    let cap = cfg.images_per_batch * cfg.rays_per_image;
    let mut batch = TrainBatch {
        rays: Vec::with_capacity(cap),
        image_ranges: Vec::with_capacity(views.len()),
        view: Vec::with_capacity(cap),
        pixel: Vec::with_capacity(cap),
        mask: Vec::with_capacity(cap),
        scale: Vec::with_capacity(cap),
        contain_scale: Vec::with_capacity(cap),
    };
    for view in views {
        let v = &dataset.views[view];
        let pixels = &pool.per_view[view];
        let u: f64 = rng.gen();
        let start = batch.rays.len();
        let mut lows = Vec::with_capacity(cfg.rays_per_image);
        for _ in 0..cfg.rays_per_image {
            let pixel = pixels[rng.gen_range(0..pixels.len())];
            let members = v.membership.of(pixel as usize);
            let areas: Vec<f64> = members.iter().map(|&m| v.masks[m as usize].pixel_area as f64).collect();
            let chosen = members[choose_mask(&areas, u)] as usize;
            let scale_of = |m: usize| v.masks[m].scale3d.ok_or(SamplingError::MissingScale { view, mask: m });
            let s_k = scale_of(chosen)?;
            let mut lo: Option<f64> = None;
            for &m in members {
                let s = scale_of(m as usize)?;
                if s < s_k {
                    lo = Some(lo.map_or(s, |l: f64| l.max(s)));
                }
            }
            lows.push(lo.unwrap_or(0.0));
            batch.rays.push(ray_through(dataset, view, pixel, cfg.sample_spread));
            batch.view.push(view as u32);
            batch.pixel.push(pixel);
            batch.mask.push(chosen as u32);
            batch.scale.push(s_k);
            batch.contain_scale.push(None);
        }
        let end = batch.rays.len();
        if cfg.densify {
            // one interpolation draw and one containment scale per mask group,
            // groups visited in order of first appearance
            let mut done = vec![false; end - start];
            for a in start..end {
                if done[a - start] {
                    continue;
                }
                let group: Vec<usize> = (a..end).filter(|&b| batch.mask[b] == batch.mask[a]).collect();
                let lo = group.iter().map(|&b| lows[b - start]).fold(0.0, f64::max);
                let s_train = densify_scale(batch.scale[a], Some(lo), rng.gen());
                // uniform in normalized scale above s_train
                let a = normalizer.normalize(s_train);
                let contain = (a < 1.0).then(|| {
                    let t: f64 = rng.gen();
                    normalizer.inverse(1.0 - t * (1.0 - a))
                });
                for &b in &group {
                    done[b - start] = true;
                    batch.scale[b] = s_train;
                    batch.contain_scale[b] = contain;
                }
            }
        }
        batch.image_ranges.push(start..end);
    }
    debug_assert!(batch.pairs().all(|p| batch.view[p.i] == batch.view[p.j]));
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_ends_at_one() {
        let cdf = mask_cdf(&[3.0, 10.0, 200.0, 5000.0]);
        assert_eq!(*cdf.last().unwrap(), 1.0);
        assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_mask_is_always_chosen() {
        for u in [0.0, 0.3, 0.999_999] {
            assert_eq!(choose_mask(&[42.0], u), 0);
        }
    }

    #[test]
    fn identical_lists_with_same_u_agree() {
        let areas = [5.0, 40.0, 400.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let u: f64 = rng.gen();
            assert_eq!(choose_mask(&areas, u), choose_mask(&areas.clone(), u));
        }
    }

    #[test]
    fn densify_interval() {
        assert_eq!(densify_scale(0.4, None, 0.0), 0.0);
        assert_eq!(densify_scale(0.4, None, 1.0), 0.4);
        assert_eq!(densify_scale(0.3, Some(0.3), 0.7), 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mean = (0..n).map(|_| densify_scale(0.6, Some(0.2), rng.gen())).sum::<f64>() / n as f64;
        assert!((mean - 0.4).abs() < 0.005);
    }
}
