//! Scale-conditioned affinity field: hash encoding, normalization, MLP,
//! unit-sphere output, and the deferred ray rendering used in training.

pub mod checkpoint;
pub mod hashgrid;
pub mod mlp;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{s, Array1, Array2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scale::ScaleNormalizer;
pub use hashgrid::{Aabb, Corner, HashGrid};
pub use mlp::{Mlp, MlpTape};

pub trait Real:
    Float + LinalgScalar + ScalarOperand + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid field config: {0}")]
    Config(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("scale must be >= 0, got {0}")]
    NegativeScale(f64),
    #[error("ray has no sample with positive weight")]
    ZeroWeights,
    #[error("ray weights must be non-negative and sum to at most 1")]
    BadWeights,
    #[error("ray has {positions} positions but {weights} weights")]
    RayShape { positions: usize, weights: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub n_levels: usize,
    pub features_per_level: usize,
    pub hashmap_size_log2: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub mlp_layers: usize,
    pub mlp_width: usize,
    pub out_dim: usize,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
    /// When false the MLP always sees scale 0.
    pub scale_conditioned: bool,
    pub init_range: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            n_levels: 24,
            features_per_level: 2,
            hashmap_size_log2: 19,
            base_resolution: 16,
            max_resolution: 2048,
            mlp_layers: 4,
            mlp_width: 256,
            out_dim: 256,
            aabb_min: [-1.0; 3],
            aabb_max: [1.0; 3],
            scale_conditioned: true,
            init_range: 1e-4,
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        let bad = |m: &str| Err(FieldError::Config(m.into()));
        if self.n_levels == 0 || self.features_per_level == 0 || self.mlp_width == 0 {
            return bad("levels, features and width must be positive");
        }
        if self.mlp_layers < 1 {
            return bad("mlp_layers must be >= 1");
        }
        if self.out_dim < 2 {
            return bad("out_dim must be >= 2");
        }
        if self.hashmap_size_log2 == 0 || self.hashmap_size_log2 > 30 {
            return bad("hashmap_size_log2 must be in 1..=30");
        }
        if self.base_resolution == 0 || self.max_resolution < self.base_resolution {
            return bad("resolutions must satisfy 0 < base <= max");
        }
        if (0..3).any(|a| !(self.aabb_max[a] > self.aabb_min[a])) {
            return bad("aabb_max must exceed aabb_min on every axis");
        }
        if !(self.init_range > 0.0) {
            return bad("init_range must be positive");
        }
        Ok(())
    }

    pub fn aabb(&self) -> Aabb {
        Aabb {
            min: self.aabb_min,
            max: self.aabb_max,
        }
    }

    /// Box around `points` padded by `margin` on every side.
    pub fn fit_aabb(&mut self, points: impl IntoIterator<Item = [f64; 3]>, margin: f64) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..3 {
            if lo[a].is_finite() && hi[a].is_finite() {
                self.aabb_min[a] = lo[a] - margin;
                self.aabb_max[a] = hi[a] + margin;
            }
        }
    }
}

/// Samples along one ray and their rendering weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySample {
    pub positions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl RaySample {
    pub fn point(x: [f64; 3]) -> Self {
        Self {
            positions: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.positions.len() != self.weights.len() {
            return Err(FieldError::RayShape {
                positions: self.positions.len(),
                weights: self.weights.len(),
            });
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w < 0.0) || total > 1.0 + 1e-9 {
            return Err(FieldError::BadWeights);
        }
        if !(total > 0.0) {
            return Err(FieldError::ZeroWeights);
        }
        Ok(())
    }
}

const TINY: f64 = 1e-30;

/// Row-wise L2 normalization; returns the normalized rows and the norms.
/// A (numerically) zero row maps to the first basis vector and records an
/// infinite norm, which zeroes its gradient.
pub fn normalize_rows<R: Real>(y: &Array2<R>) -> (Array2<R>, Vec<R>) {
    let tiny = R::from_f64(TINY);
    let mut out = y.clone();
    let mut norms = Vec::with_capacity(y.nrows());
    for mut row in out.rows_mut() {
        let n = row.iter().map(|&v| v * v).sum::<R>().sqrt();
        if n > tiny {
            row.mapv_inplace(|v| v / n);
            norms.push(n);
        } else {
            row.fill(R::zero());
            row[0] = R::one();
            norms.push(R::infinity());
        }
    }
    (out, norms)
}

/// Backward of `f = y / |y|`: `(df - f (f . df)) / |y|`, row-wise.
pub fn normalize_backward<R: Real>(f: &Array2<R>, norms: &[R], df: &Array2<R>) -> Array2<R> {
    let mut dy = df.clone();
    for (i, mut row) in dy.rows_mut().into_iter().enumerate() {
        let fi = f.row(i);
        let proj: R = fi.iter().zip(df.row(i).iter()).map(|(&a, &b)| a * b).sum();
        let n = norms[i];
        for (d, &fv) in row.iter_mut().zip(fi.iter()) {
            *d = (*d - fv * proj) / n;
        }
    }
    dy
}

/// Hash features of a batch of rays, rendered and normalized once so the MLP
/// can be evaluated at any number of scales.
#[derive(Debug, Clone)]
pub struct EncodedRays<R> {
    corners: Vec<Corner<R>>,
    offsets: Vec<usize>,
    /// Normalized rendered hash features, one row per ray.
    pub hidden: Array2<R>,
    norms: Vec<R>,
    pub clamped: usize,
}

impl<R> EncodedRays<R> {
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }
}

impl<R: Real> EncodedRays<R> {
    /// Forward-only copy holding the given rows; it cannot be backpropagated.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            corners: Vec::new(),
            offsets: vec![0; rows.len() + 1],
            hidden: self.hidden.select(Axis(0), rows),
            norms: rows.iter().map(|&r| self.norms[r]).collect(),
            clamped: 0,
        }
    }

    /// Forward-only concatenation of several batches.
    pub fn concat(parts: &[Self]) -> Self {
        let views: Vec<_> = parts.iter().map(|p| p.hidden.view()).collect();
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let hidden = if views.is_empty() {
            Array2::zeros((0, 0))
        } else {
            ndarray::concatenate(Axis(0), &views).expect("equal widths")
        };
        Self {
            corners: Vec::new(),
            offsets: vec![0; n + 1],
            hidden,
            norms: parts.iter().flat_map(|p| p.norms.iter().copied()).collect(),
            clamped: parts.iter().map(|p| p.clamped).sum(),
        }
    }
}

/// One MLP evaluation of a ray batch at per-ray scales.
#[derive(Debug, Clone)]
pub struct HeadPass<R> {
    tape: MlpTape<R>,
    /// Unit output features, one row per ray.
    pub features: Array2<R>,
    norms: Vec<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads<R> {
    pub table: Vec<R>,
    pub weights: Vec<Array2<R>>,
    pub biases: Vec<Array1<R>>,
}

impl<R: Real> FieldGrads<R> {
    pub fn zero(&mut self) {
        self.table.iter_mut().for_each(|v| *v = R::zero());
        self.weights.iter_mut().for_each(|w| w.fill(R::zero()));
        self.biases.iter_mut().for_each(|b| b.fill(R::zero()));
    }

    /// Parameter groups in model order: table, then each layer's weights and bias.
    pub fn slices(&self) -> Vec<&[R]> {
        let mut out: Vec<&[R]> = vec![&self.table];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().unwrap());
            out.push(b.as_slice().unwrap());
        }
        out
    }

    pub fn scale(&mut self, k: R) {
        self.table.iter_mut().for_each(|v| *v *= k);
        self.weights.iter_mut().for_each(|w| w.mapv_inplace(|v| v * k));
        self.biases.iter_mut().for_each(|b| b.mapv_inplace(|v| v * k));
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| *v == R::zero()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityField<R> {
    pub config: FieldConfig,
    pub grid: HashGrid<R>,
    pub mlp: Mlp<R>,
    pub normalizer: ScaleNormalizer,
}

/// Rows per chunk for parallel batched queries.
const QUERY_CHUNK: usize = 512;

impl<R: Real> AffinityField<R> {
    pub fn new(config: FieldConfig, normalizer: ScaleNormalizer) -> Result<Self, FieldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut grid = HashGrid::new(
            config.n_levels,
            config.features_per_level,
            config.hashmap_size_log2,
            config.base_resolution,
            config.max_resolution,
            config.aabb(),
        );
        grid.init_uniform(&mut rng, config.init_range);
        let mlp = Mlp::new(grid.output_dim() + 1, config.mlp_width, config.out_dim, config.mlp_layers, &mut rng);
        Ok(Self {
            config,
            grid,
            mlp,
            normalizer,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.grid.table.len() + self.mlp.weights.iter().map(|w| w.len()).sum::<usize>() + self.mlp.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn zero_grads(&self) -> FieldGrads<R> {
        FieldGrads {
            table: vec![R::zero(); self.grid.table.len()],
            weights: self.mlp.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: self.mlp.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Mutable parameter groups in the same order as [`FieldGrads::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [R]> {
        let mut out: Vec<&mut [R]> = vec![&mut self.grid.table];
        for (w, b) in self.mlp.weights.iter_mut().zip(self.mlp.biases.iter_mut()) {
            out.push(w.as_slice_mut().unwrap());
            out.push(b.as_slice_mut().unwrap());
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[R]> {
        let mut out: Vec<&[R]> = vec![&self.grid.table];
        for (w, b) in self.mlp.weights.iter().zip(&self.mlp.biases) {
            out.push(w.as_slice().unwrap());
            out.push(b.as_slice().unwrap());
        }
        out
    }

    /// The scalar the MLP sees for world scale `s`.
    pub fn scale_input(&self, s: f64) -> R {
        if self.config.scale_conditioned {
            R::from_f64(self.normalizer.normalize(s))
        } else {
            R::zero()
        }
    }

    pub fn encode_rays(&self, rays: &[RaySample]) -> Result<EncodedRays<R>, FieldError> {
        let dim = self.grid.output_dim();
        let per_sample = 8 * self.grid.n_levels;
        let mut corners = Vec::with_capacity(rays.iter().map(|r| r.positions.len()).sum::<usize>() * per_sample);
        let mut offsets = Vec::with_capacity(rays.len() + 1);
        offsets.push(0);
        let mut h = Array2::zeros((rays.len(), dim));
        let mut clamped = 0;
        for (i, ray) in rays.iter().enumerate() {
            ray.validate()?;
            let start = corners.len();
            for (x, &w) in ray.positions.iter().zip(&ray.weights) {
                clamped += self.grid.footprint(*x, R::from_f64(w), &mut corners) as usize;
            }
            self.grid
                .gather(&corners[start..], h.row_mut(i).as_slice_mut().unwrap());
            offsets.push(corners.len());
        }
        let (hidden, norms) = normalize_rows(&h);
        Ok(EncodedRays {
            corners,
            offsets,
            hidden,
            norms,
            clamped,
        })
    }

    pub fn encode_points(&self, xs: &[[f64; 3]]) -> Result<EncodedRays<R>, FieldError> {
        let rays: Vec<RaySample> = xs.iter().map(|&x| RaySample::point(x)).collect();
        self.encode_rays(&rays)
    }

    /// Evaluate the MLP for every encoded ray at its own scale.
    pub fn head_forward(&self, enc: &EncodedRays<R>, scales: &[f64]) -> Result<HeadPass<R>, FieldError> {
        assert_eq!(scales.len(), enc.len(), "one scale per ray");
        let dim = self.grid.output_dim();
        let mut input = Array2::zeros((enc.len(), dim + 1));
        input.slice_mut(s![.., ..dim]).assign(&enc.hidden);
        for (i, &sc) in scales.iter().enumerate() {
            if !sc.is_finite() {
                return Err(FieldError::NonFinite);
            }
            if sc < 0.0 {
                return Err(FieldError::NegativeScale(sc));
            }
            input[[i, dim]] = self.scale_input(sc);
        }
        let tape = self.mlp.forward(input);
        let (features, norms) = normalize_rows(tape.output());
        Ok(HeadPass { tape, features, norms })
    }

    /// Backpropagate `d_features` through one head pass; returns the gradient
    /// w.r.t. the normalized hash features.
    pub fn head_backward(&self, pass: &HeadPass<R>, d_features: &Array2<R>, grads: &mut FieldGrads<R>) -> Array2<R> {
        let dy = normalize_backward(&pass.features, &pass.norms, d_features);
        let d_in = self.mlp.backward(&pass.tape, dy, &mut grads.weights, &mut grads.biases);
        let dim = self.grid.output_dim();
        d_in.slice(s![.., ..dim]).to_owned()
    }

    /// Backpropagate the summed hidden gradient of all head passes into the table.
    pub fn encode_backward(&self, enc: &EncodedRays<R>, d_hidden: &Array2<R>, grads: &mut FieldGrads<R>) {
        let dh = normalize_backward(&enc.hidden, &enc.norms, d_hidden);
        for i in 0..enc.len() {
            let corners = &enc.corners[enc.offsets[i]..enc.offsets[i + 1]];
            self.grid
                .scatter(corners, dh.row(i).as_slice().unwrap(), &mut grads.table);
        }
    }

    fn check_point(x: [f64; 3], s: f64) -> Result<(), FieldError> {
        if x.iter().any(|v| !v.is_finite()) || !s.is_finite() {
            return Err(FieldError::NonFinite);
        }
        if s < 0.0 {
            return Err(FieldError::NegativeScale(s));
        }
        Ok(())
    }

    pub fn query(&self, x: [f64; 3], s: f64) -> Result<Vec<R>, FieldError> {
        Self::check_point(x, s)?;
        let enc = self.encode_points(&[x])?;
        Ok(self.head_forward(&enc, &[s])?.features.row(0).to_vec())
    }

    /// Features of many points at one scale, computed in fixed-size chunks in
    /// parallel. Output rows follow input order.
    pub fn query_batch(&self, xs: &[[f64; 3]], s: f64) -> Result<Array2<R>, FieldError> {
        let enc = self.encode_points_batch(xs)?;
        self.query_encoded(&enc, s)
    }

    /// Encode many points once for repeated multi-scale queries.
    pub fn encode_points_batch(&self, xs: &[[f64; 3]]) -> Result<Vec<EncodedRays<R>>, FieldError> {
        xs.par_chunks(QUERY_CHUNK).map(|c| self.encode_points(c)).collect()
    }

    pub fn query_encoded(&self, chunks: &[EncodedRays<R>], s: f64) -> Result<Array2<R>, FieldError> {
        if !s.is_finite() {
            return Err(FieldError::NonFinite);
        }
        let parts: Vec<Array2<R>> = chunks
            .par_iter()
            .map(|enc| self.head_forward(enc, &vec![s; enc.len()]).map(|p| p.features))
            .collect::<Result<_, _>>()?;
        let n: usize = parts.iter().map(|p| p.nrows()).sum();
        let mut out = Array2::zeros((n, self.out_dim()));
        let mut at = 0;
        for p in parts {
            out.slice_mut(s![at..at + p.nrows(), ..]).assign(&p);
            at += p.nrows();
        }
        Ok(out)
    }

    pub fn render_ray(&self, ray: &RaySample, s: f64) -> Result<Vec<R>, FieldError> {
        Ok(self.render_ray_scales(ray, &[s])?.remove(0))
    }

    /// Render the hash feature once, then run the MLP at every scale.
    pub fn render_ray_scales(&self, ray: &RaySample, scales: &[f64]) -> Result<Vec<Vec<R>>, FieldError> {
        let enc = self.encode_rays(std::slice::from_ref(ray))?;
        let wide = EncodedRays {
            corners: Vec::new(),
            offsets: vec![0; scales.len() + 1],
            hidden: Array2::from_shape_fn((scales.len(), enc.hidden.ncols()), |(_, j)| enc.hidden[[0, j]]),
            norms: vec![enc.norms[0]; scales.len()],
            clamped: enc.clamped,
        };
        let pass = self.head_forward(&wide, scales)?;
        Ok(pass.features.rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// `-|F(x1, s) - F(x2, s)|`.
    pub fn affinity(&self, x1: [f64; 3], x2: [f64; 3], s: f64) -> Result<f64, FieldError> {
        let a = self.query(x1, s)?;
        let b = self.query(x2, s)?;
        Ok(-a
            .iter()
            .zip(&b)
            .map(|(&p, &q)| (p - q).as_f64().powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny_config() -> FieldConfig {
        FieldConfig {
            n_levels: 2,
            features_per_level: 2,
            hashmap_size_log2: 6,
            base_resolution: 2,
            max_resolution: 6,
            mlp_layers: 3,
            mlp_width: 8,
            out_dim: 4,
            init_range: 0.5,
            seed: 9,
            ..FieldConfig::default()
        }
    }

    fn normalizer() -> ScaleNormalizer {
        ScaleNormalizer::fit(&[0.0, 0.1, 0.2, 0.4, 0.8, 1.6], 2.0).unwrap()
    }

    fn model() -> AffinityField<f64> {
        AffinityField::new(tiny_config(), normalizer()).unwrap()
    }

    #[test]
    fn outputs_are_unit_norm_and_deterministic() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s = rng.gen_range(0.0..3.0);
            let f = m.query(x, s).unwrap();
            let n: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
            assert_eq!(f, m.query(x, s).unwrap());
        }
    }

    #[test]
    fn scales_with_equal_normalized_value_give_equal_features() {
        let m = model();
        // both beyond the largest reference quantile, so both normalize to 1
        let x = [0.1, 0.2, 0.3];
        assert_eq!(m.query(x, 1.7).unwrap(), m.query(x, 1.9).unwrap());
    }

    #[test]
    fn single_sample_ray_equals_point_query() {
        let m = model();
        let x = [0.3, -0.2, 0.6];
        assert_eq!(m.render_ray(&RaySample::point(x), 0.3).unwrap(), m.query(x, 0.3).unwrap());
    }

    #[test]
    fn deferred_rendering_matches_per_scale_rendering() {
        let m = model();
        let ray = RaySample {
            positions: vec![[0.1, 0.1, 0.1], [0.2, 0.15, 0.1], [0.3, 0.2, 0.1]],
            weights: vec![0.25, 0.5, 0.25],
        };
        let scales = [0.0, 0.05, 0.3, 1.2];
        let multi = m.render_ray_scales(&ray, &scales).unwrap();
        for (s, f) in scales.iter().zip(&multi) {
            let single = m.render_ray(&ray, *s).unwrap();
            for (a, b) in f.iter().zip(&single) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn duplicate_samples_equal_one_sample() {
        let m = model();
        let x = [0.4, 0.4, -0.1];
        let ray = RaySample {
            positions: vec![x, x],
            weights: vec![0.3, 0.6],
        };
        let a = m.render_ray(&ray, 0.5).unwrap();
        let b = m.query(x, 0.5).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_rays_and_inputs_are_rejected() {
        let m = model();
        let zero = RaySample {
            positions: vec![[0.0; 3]],
            weights: vec![0.0],
        };
        assert_eq!(m.render_ray(&zero, 0.1), Err(FieldError::ZeroWeights));
        assert_eq!(m.query([f64::NAN, 0.0, 0.0], 0.1), Err(FieldError::NonFinite));
        assert_eq!(m.query([0.0; 3], -0.1), Err(FieldError::NegativeScale(-0.1)));
    }

    #[test]
    fn affinity_properties() {
        let m = model();
        let (a, b) = ([0.1, 0.2, 0.3], [-0.5, 0.4, 0.0]);
        assert_eq!(m.affinity(a, a, 0.2).unwrap(), 0.0);
        let ab = m.affinity(a, b, 0.2).unwrap();
        assert_eq!(ab, m.affinity(b, a, 0.2).unwrap());
        assert!((-2.0..=0.0).contains(&ab));
    }

    #[test]
    fn normalize_backward_at_unit_input_is_tangent_projection() {
        let f = Array2::from_shape_vec((1, 3), vec![0.6, 0.0, 0.8]).unwrap();
        let up = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, -1.0]).unwrap();
        let got = normalize_backward(&f, &[1.0], &up);
        // (I - f f^T) up
        let fdotu = 0.6 * 1.0 + 0.8 * -1.0;
        let want = [1.0 - 0.6 * fdotu, 2.0, -1.0 - 0.8 * fdotu];
        for j in 0..3 {
            assert!((got[[0, j]] - want[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn batched_queries_match_single_queries() {
        let m = model();
        let xs: Vec<[f64; 3]> = (0..1100).map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), 0.2]).collect();
        let batch = m.query_batch(&xs, 0.4).unwrap();
        for i in [0, 511, 512, 1099] {
            let single = m.query(xs[i], 0.4).unwrap();
            for j in 0..m.out_dim() {
                assert!((batch[[i, j]] - single[j]).abs() < 1e-12);
            }
        }
    }
}
