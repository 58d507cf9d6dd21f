//! Field training with the scale-conditioned contrastive objective.

pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod sampling;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::field::{AffinityField, FieldConfig, FieldError, FieldGrads, Real};
use crate::scale::{ScaleError, ScaleNormalizer};
pub use loss::{batch_loss, pull_loss, push_loss, LossParts, LossWeights};
pub use optim::{Adam, AdamParams};
pub use sampling::{choose_mask, densify_scale, mask_cdf, sample_batch, PairLabel, PixelPool, SamplingConfig, SamplingError, TrainBatch};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error("loss became non-finite at step {step} (pull {pull}, push {push}, containment {containment})")]
    NonFinite {
        step: usize,
        pull: f64,
        push: f64,
        containment: f64,
    },
    #[error("dataset has no point cloud or masks to fit the field box")]
    NoGeometry,
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub margin: f64,
    pub pull_weight: f64,
    pub push_weight: f64,
    pub containment_weight: f64,
    pub hash: AdamParams,
    pub mlp: AdamParams,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            seed: 0,
            sampling: SamplingConfig::default(),
            margin: 1.0,
            pull_weight: 1.0,
            push_weight: 1.0,
            containment_weight: 1.0,
            hash: AdamParams {
                lr: 1e-2,
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-15,
            },
            mlp: AdamParams {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-8,
            },
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let s = &self.sampling;
        if s.images_per_batch == 0 || s.rays_per_image < 2 {
            return Err(TrainError::Config("need >= 1 image and >= 2 rays per image".into()));
        }
        if !(self.margin > 0.0) {
            return Err(TrainError::Config("margin must be positive".into()));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.sampling.images_per_batch * self.sampling.rays_per_image
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            margin: self.margin,
            pull: self.pull_weight,
            push: self.push_weight,
            containment: self.containment_weight,
        }
    }
}

/// Loss of one batch and the gradient of its per-pair mean.
pub fn loss_and_grad<R: Real>(
    model: &AffinityField<R>,
    batch: &TrainBatch,
    weights: &LossWeights,
    grads: &mut FieldGrads<R>,
) -> Result<LossParts, FieldError> {
    let enc = model.encode_rays(&batch.rays)?;
    let train = model.head_forward(&enc, &batch.scale)?;
    let contain = if batch.has_containment() {
        Some(model.head_forward(&enc, &batch.contain_or_train_scales())?)
    } else {
        None
    };
    let n_pairs: usize = batch.image_ranges.iter().map(|r| r.len() * r.len().saturating_sub(1) / 2).sum();
    let (parts, d_train, d_contain) = batch_loss(
        batch,
        train.features.view(),
        contain.as_ref().map(|c| c.features.view()),
        weights,
        1.0 / n_pairs.max(1) as f64,
    );
    let mut d_hidden = model.head_backward(&train, &d_train, grads);
    if let (Some(pass), Some(dc)) = (&contain, &d_contain) {
        d_hidden += &model.head_backward(pass, dc, grads);
    }
    model.encode_backward(&enc, &d_hidden, grads);
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub pull: f64,
    pub push: f64,
    pub containment: f64,
    pub pairs: usize,
    pub wall_ms: u128,
}

/// Fit the scale normalizer and the field box from a dataset with scales.
pub fn prepare_field(dataset: &Dataset, mut field: FieldConfig) -> Result<(FieldConfig, ScaleNormalizer), TrainError> {
    let normalizer = ScaleNormalizer::fit(&dataset.all_scales(), 2.0 * dataset.camera_extent)?;
    let points: Vec<[f64; 3]> = match dataset.points_f64() {
        Some(p) if !p.is_empty() => p,
        _ => dataset
            .views
            .iter()
            .flat_map(|v| {
                (0..v.camera.pixel_count()).filter_map(move |p| {
                    v.depth.get(p).map(|d| {
                        let (x, y) = v.depth.coords(p);
                        v.camera.deproject(x, y, d as f64)
                    })
                })
            })
            .collect(),
    };
    if points.is_empty() {
        return Err(TrainError::NoGeometry);
    }
    field.fit_aabb(points, 0.05 * dataset.camera_extent);
    Ok((field, normalizer))
}

pub struct Trainer<'a, R> {
    pub model: AffinityField<R>,
    pub config: TrainConfig,
    dataset: &'a Dataset,
    pool: PixelPool,
    adam: Adam<R>,
    grads: FieldGrads<R>,
    rng: ChaCha8Rng,
    step: usize,
}

impl<'a, R: Real> Trainer<'a, R> {
    pub fn new(dataset: &'a Dataset, model: AffinityField<R>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let grads = model.zero_grads();
        let sizes: Vec<usize> = grads.slices().iter().map(|s| s.len()).collect();
        Ok(Self {
            pool: PixelPool::new(dataset),
            adam: Adam::new(&sizes),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            grads,
            model,
            config,
            dataset,
            step: 0,
        })
    }

    pub fn sample(&mut self) -> Result<TrainBatch, TrainError> {
        Ok(sample_batch(
            self.dataset,
            &self.pool,
            &self.config.sampling,
            &self.model.normalizer,
            &mut self.rng,
        )?)
    }

    /// Sample a batch, backpropagate and apply one optimizer update.
    pub fn step(&mut self) -> Result<LossParts, TrainError> {
        let batch = self.sample()?;
        self.grads.zero();
        let parts = loss_and_grad(&self.model, &batch, &self.config.loss_weights(), &mut self.grads)?;
        if !parts.total().is_finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                pull: parts.pull,
                push: parts.push,
                containment: parts.containment,
            });
        }
        let groups = self.grads.slices().len();
        let mut hyper = vec![self.config.mlp; groups];
        hyper[0] = self.config.hash;
        self.adam.step(self.model.param_slices_mut(), self.grads.slices(), &hyper);
        self.step += 1;
        Ok(parts)
    }

    /// Run all configured steps, reporting every `log_every` steps and the last.
    pub fn run(mut self, mut on_log: impl FnMut(&StepLog)) -> Result<(AffinityField<R>, Vec<StepLog>), TrainError> {
        let start = Instant::now();
        let mut logs = Vec::new();
        for step in 0..self.config.steps {
            let parts = self.step()?;
            let last = step + 1 == self.config.steps;
            if last || (self.config.log_every > 0 && step % self.config.log_every == 0) {
                let log = StepLog {
                    step,
                    loss: parts.mean(),
                    pull: parts.pull,
                    push: parts.push,
                    containment: parts.containment,
                    pairs: parts.pairs,
                    wall_ms: start.elapsed().as_millis(),
                };
                on_log(&log);
                logs.push(log);
            }
        }
        Ok((self.model, logs))
    }
}

/// Build a field for `dataset` and train it.
pub fn train(
    dataset: &Dataset,
    field: FieldConfig,
    config: TrainConfig,
    on_log: impl FnMut(&StepLog),
) -> Result<(AffinityField<f32>, Vec<StepLog>), TrainError> {
    let (field, normalizer) = prepare_field(dataset, field)?;
    let model = AffinityField::<f32>::new(field, normalizer)?;
    Trainer::new(dataset, model, config)?.run(on_log)
}
