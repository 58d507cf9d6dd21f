//! Contrastive pair losses over unit features.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use super::sampling::TrainBatch;
use crate::field::Real;

pub fn distance<R: Real>(a: ArrayView1<R>, b: ArrayView1<R>) -> R {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum::<R>().sqrt()
}

/// `|a - b|`.
pub fn pull_loss(a: &[f64], b: &[f64]) -> f64 {
    distance(ArrayView1::from(a), ArrayView1::from(b))
}

/// `ReLU(m - |a - b|)`.
pub fn push_loss(a: &[f64], b: &[f64], margin: f64) -> f64 {
    (margin - pull_loss(a, b)).max(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub pull: f64,
    pub push: f64,
    pub containment: f64,
    /// Intra-image ray pairs in the batch.
    pub pairs: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.pull + self.push + self.containment
    }

    /// Per-pair mean of the total, the quantity that is optimized.
    pub fn mean(&self) -> f64 {
        self.total() / self.pairs.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub margin: f64,
    pub pull: f64,
    pub push: f64,
    pub containment: f64,
}

fn sq_dist<R: Real>(a: &[R], b: &[R]) -> R {
    // independent lanes let the compiler vectorize
    let mut lanes = [R::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            lanes[k] += d * d;
        }
    }
    let mut tail = R::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

/// Add the gradient of `coef * |a - b|` to rows `i` and `j` of `grad`.
fn add_distance_grad<R: Real>(a: &[R], b: &[R], grad: &mut [R], i: usize, j: usize, d: R, coef: R) {
    if d <= R::zero() {
        return;
    }
    let k = coef / d;
    let dim = a.len();
    let (lo, hi) = grad.split_at_mut(j * dim);
    let gi = &mut lo[i * dim..(i + 1) * dim];
    let gj = &mut hi[..dim];
    for c in 0..dim {
        let g = k * (a[c] - b[c]);
        gi[c] += g;
        gj[c] -= g;
    }
}

/// Summed losses over every intra-image pair, and gradients of
/// `grad_scale * weighted total` w.r.t. the training-scale and
/// containment-scale features. Rows of `contain` are only read for rays with
/// a containment scale.
pub fn batch_loss<R: Real>(
    batch: &TrainBatch,
    train: ArrayView2<R>,
    contain: Option<ArrayView2<R>>,
    w: &LossWeights,
    grad_scale: f64,
) -> (LossParts, Array2<R>, Option<Array2<R>>) {
    let dim = train.ncols();
    let train = train.as_standard_layout();
    let tf = train.as_slice().unwrap();
    let contain = contain.map(|c| c.as_standard_layout().into_owned());
    let cf = contain.as_ref().map(|c| c.as_slice().unwrap());
    let mut d_train = vec![R::zero(); tf.len()];
    let mut d_contain = cf.map(|c| vec![R::zero(); c.len()]);

    let mut parts = LossParts::default();
    let margin = R::from_f64(w.margin);
    let margin_sq = margin * margin;
    let (c_pull, c_push, c_contain) = (
        R::from_f64(w.pull * grad_scale),
        R::from_f64(-w.push * grad_scale),
        R::from_f64(w.containment * grad_scale),
    );
    let row = |_: &[R], i: usize| -> std::ops::Range<usize> { i * dim..(i + 1) * dim };
    for range in &batch.image_ranges {
        for i in range.clone() {
            let a = &tf[row(tf, i)];
            for j in i + 1..range.end {
                parts.pairs += 1;
                let b = &tf[row(tf, j)];
                let d2 = sq_dist(a, b);
                if batch.mask[i] == batch.mask[j] {
                    let d = d2.sqrt();
                    parts.pull += w.pull * d.as_f64();
                    add_distance_grad(a, b, &mut d_train, i, j, d, c_pull);
                    if let (Some(cf), Some(dc), Some(_)) = (cf, d_contain.as_mut(), batch.contain_scale[i]) {
                        let (ca, cb) = (&cf[row(cf, i)], &cf[row(cf, j)]);
                        let dcn = sq_dist(ca, cb).sqrt();
                        parts.containment += w.containment * dcn.as_f64();
                        add_distance_grad(ca, cb, dc, i, j, dcn, c_contain);
                    }
                } else if d2 < margin_sq {
                    let d = d2.sqrt();
                    parts.push += w.push * (margin - d).as_f64();
                    add_distance_grad(a, b, &mut d_train, i, j, d, c_push);
                }
            }
        }
    }
    let shape = (tf.len() / dim.max(1), dim);
    (
        parts,
        Array2::from_shape_vec(shape, d_train).unwrap(),
        d_contain.map(|d| Array2::from_shape_vec(shape, d).unwrap()),
    )
}
