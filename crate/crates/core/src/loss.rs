//! Per-attribute binary cross-entropy and the original GAN objectives.
//!
//! Probabilities are clamped to `[CLAMP, 1 − CLAMP]` before taking logs;
//! gradients are evaluated at the clamped point.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CLAMP: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct LossValue<T> {
    pub value: f64,
    /// Gradient with respect to the predictions.
    pub grad: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorLoss<T> {
    pub value: f64,
    pub grad_real: Tensor<T>,
    pub grad_fake: Tensor<T>,
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP, 1.0 - CLAMP)
}

/// Mean over all elements of `−w_k·[t·ln p + (1 − t)·ln(1 − p)]`, where `k`
/// is the index along the last axis.
pub fn bce_loss<T: Real>(
    predictions: &Tensor<T>,
    targets: &Tensor<T>,
    class_weights: Option<&[f64]>,
) -> Result<LossValue<T>> {
    if predictions.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "predictions {} vs targets {}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let k = *predictions.dims().last().expect("non-empty shape");
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(Error::Shape(format!("{} class weights for {k} classes", w.len())));
        }
    }
    let count = predictions.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (i, (&p, &t)) in predictions.data().iter().zip(targets.data()).enumerate() {
        let t = t.as_f64();
        if t != 0.0 && t != 1.0 {
            return Err(Error::Input(format!("target {t} at {i} is not 0 or 1")));
        }
        let w = class_weights.map_or(1.0, |w| w[i % k]);
        let p = clamp(p.as_f64());
        value -= w * (t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        grad.push(T::of(-w * (t / p - (1.0 - t) / (1.0 - p)) / count));
    }
    Ok(LossValue {
        value: value / count,
        grad: Tensor::from_vec(predictions.dims().to_vec(), grad)?,
    })
}

/// `mean(−ln D(x)) + mean(−ln(1 − D(G(z))))`.
pub fn gan_d_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<DiscriminatorLoss<T>> {
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    let mut value = 0.0;
    let grad_real = d_real.map(|p| {
        let p = clamp(p.as_f64());
        T::of(-1.0 / (p * nr))
    });
    let grad_fake = d_fake.map(|p| {
        let p = clamp(p.as_f64());
        T::of(1.0 / ((1.0 - p) * nf))
    });
    for &p in d_real.data() {
        value -= clamp(p.as_f64()).ln() / nr;
    }
    for &p in d_fake.data() {
        value -= (1.0 - clamp(p.as_f64())).ln() / nf;
    }
    Ok(DiscriminatorLoss {
        value,
        grad_real,
        grad_fake,
    })
}

/// Non-saturating generator objective `mean(−ln D(G(z)))`.
pub fn gan_g_loss<T: Real>(d_fake: &Tensor<T>) -> Result<LossValue<T>> {
    let n = d_fake.len() as f64;
    let value = d_fake
        .data()
        .iter()
        .map(|&p| -clamp(p.as_f64()).ln() / n)
        .sum();
    let grad = d_fake.map(|p| T::of(-1.0 / (clamp(p.as_f64()) * n)));
    Ok(LossValue { value, grad })
}
