//! Central-difference check of the analytic loss gradient.

use crate::field::{AffinityField, FieldError, Real};
use crate::train::loss::{batch_loss, LossWeights};
use crate::train::{loss_and_grad, TrainBatch};

/// A parameter as (group in `param_slices`, index within the group).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub group: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub param: ParamRef,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    /// `|a - n| / max(|a|, |n|)`, or 0 when both are below `floor`.
    pub fn rel_err(&self, floor: f64) -> f64 {
        let m = self.analytic.abs().max(self.numeric.abs());
        if m < floor {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / m
        }
    }
}

/// Per-pair mean of the weighted loss, forward only.
pub fn mean_loss<R: Real>(model: &AffinityField<R>, batch: &TrainBatch, weights: &LossWeights) -> Result<f64, FieldError> {
    let enc = model.encode_rays(&batch.rays)?;
    let train = model.head_forward(&enc, &batch.scale)?;
    let contain = if batch.has_containment() {
        Some(model.head_forward(&enc, &batch.contain_or_train_scales())?)
    } else {
        None
    };
    let (parts, _, _) = batch_loss(batch, train.features.view(), contain.as_ref().map(|c| c.features.view()), weights, 1.0);
    Ok(parts.mean())
}

/// Every parameter of `model`, in `param_slices` order.
pub fn all_params<R: Real>(model: &AffinityField<R>) -> Vec<ParamRef> {
    model
        .param_slices()
        .iter()
        .enumerate()
        .flat_map(|(group, s)| (0..s.len()).map(move |index| ParamRef { group, index }))
        .collect()
}

/// Analytic gradient of `model` (at its own precision) against central
/// differences of the f64 copy of the same parameters.
pub fn check_gradients<R: Real>(
    model: &AffinityField<R>,
    batch: &TrainBatch,
    weights: &LossWeights,
    params: &[ParamRef],
    h: f64,
) -> Result<Vec<GradCheck>, FieldError> {
    let mut grads = model.zero_grads();
    loss_and_grad(model, batch, weights, &mut grads)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.iter().map(|v| v.as_f64()).collect()).collect();
    let mut m = model.cast::<f64>();
    let mut out = Vec::with_capacity(params.len());
    for &p in params {
        let v = m.param_slices()[p.group][p.index];
        m.param_slices_mut()[p.group][p.index] = v + h;
        let plus = mean_loss(&m, batch, weights)?;
        m.param_slices_mut()[p.group][p.index] = v - h;
        let minus = mean_loss(&m, batch, weights)?;
        m.param_slices_mut()[p.group][p.index] = v;
        out.push(GradCheck {
            param: p,
            analytic: analytic[p.group][p.index],
            numeric: (plus - minus) / (2.0 * h),
        });
    }
    Ok(out)
}
