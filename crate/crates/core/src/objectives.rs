//! Adversarial, auxiliary-class and latent-reconstruction losses.
//!
//! Every loss is the quantity to *minimize*: the negative mean log-likelihood
//! over the batch. Probabilities are never materialized; `-log sigmoid(x)`
//! is evaluated as `softplus(-x)` and class terms as `logsumexp - logit`, so
//! logits of magnitude 1e4 and beyond stay finite.
//!
//! Each `*_objective` function returns the loss together with its gradient
//! with respect to the input logits (or predicted latents).

use crate::error::{Error, Result};

/// A minimized loss and its named additive breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl LossValue {
    fn from_components(components: Vec<(&'static str, f64)>) -> Self {
        let value = components.iter().map(|(_, v)| v).sum();
        LossValue { value, components }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Class logits `[B, K]` (row-major) with their target labels `[B]`.
#[derive(Clone, Copy, Debug)]
pub struct ClassLogits<'a> {
    pub logits: &'a [f64],
    pub labels: &'a [usize],
}

impl ClassLogits<'_> {
    fn num_classes(&self) -> Result<usize> {
        if self.labels.is_empty() {
            return Err(Error::Contract("class batch is empty".into()));
        }
        if self.logits.len() % self.labels.len() != 0 || self.logits.len() < 2 * self.labels.len() {
            return Err(Error::Contract(format!(
                "{} class logits do not form {} rows of at least 2 classes",
                self.logits.len(),
                self.labels.len()
            )));
        }
        let k = self.logits.len() / self.labels.len();
        if let Some(l) = self.labels.iter().find(|&&l| l >= k) {
            return Err(Error::Domain(format!("label {l} out of range for {k} classes")));
        }
        Ok(k)
    }
}

/// Gradients of a loss with respect to each logit group it consumed.
/// Groups the loss does not use are left empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogitGrads {
    pub source_real: Vec<f64>,
    pub source_fake: Vec<f64>,
    pub class_real: Vec<f64>,
    pub class_fake: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub loss: LossValue,
    pub grads: LogitGrads,
}

/// `ln(1 + e^x)` without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn non_empty(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Contract(format!("{name} batch is empty")));
    }
    Ok(())
}

/// Mean of `softplus(sign * l)` and its gradient.
fn source_term(logits: &[f64], sign: f64) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let value = logits.iter().map(|&l| softplus(sign * l)).sum::<f64>() / n;
    let grad = logits.iter().map(|&l| sign * sigmoid(sign * l) / n).collect();
    (value, grad)
}

/// Mean categorical cross-entropy and its gradient (`softmax - onehot`).
fn class_term(batch: ClassLogits<'_>) -> Result<(f64, Vec<f64>)> {
    let k = batch.num_classes()?;
    let n = batch.labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(batch.logits.len());
    for (row, &label) in batch.logits.chunks_exact(k).zip(batch.labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[label];
        for (j, &l) in row.iter().enumerate() {
            let p = (l - lse).exp();
            grad.push((p - if j == label { 1.0 } else { 0.0 }) / n);
        }
    }
    Ok((total / n, grad))
}

/// Discriminator GAN loss: `-mean log σ(l_real) - mean log(1 - σ(l_fake))`.
pub fn gan_d_objective(source_real: &[f64], source_fake: &[f64]) -> Result<Objective> {
    non_empty("real source", source_real)?;
    non_empty("fake source", source_fake)?;
    let (real, g_real) = source_term(source_real, -1.0);
    let (fake, g_fake) = source_term(source_fake, 1.0);
    Ok(Objective {
        loss: LossValue::from_components(vec![("source_real", real), ("source_fake", fake)]),
        grads: LogitGrads {
            source_real: g_real,
            source_fake: g_fake,
            ..LogitGrads::default()
        },
    })
}

/// Non-saturating generator GAN loss: `-mean log σ(l_fake)`.
pub fn gan_g_objective(source_fake: &[f64]) -> Result<Objective> {
    non_empty("fake source", source_fake)?;
    let (fake, g_fake) = source_term(source_fake, -1.0);
    Ok(Objective {
        loss: LossValue::from_components(vec![("source_fake", fake)]),
        grads: LogitGrads {
            source_fake: g_fake,
            ..LogitGrads::default()
        },
    })
}

/// AC-GAN discriminator loss. The class term is taken on real images only
/// unless `include_fake_class_term` is set, which adds the fake-image class
/// cross-entropy of the original AC-GAN formulation.
pub fn ac_d_objective(
    source_real: &[f64],
    source_fake: &[f64],
    class_real: ClassLogits<'_>,
    class_fake: ClassLogits<'_>,
    include_fake_class_term: bool,
) -> Result<Objective> {
    let mut obj = gan_d_objective(source_real, source_fake)?;
    let (cls_real, g_real) = class_term(class_real)?;
    obj.loss.components.push(("class_real", cls_real));
    obj.grads.class_real = g_real;
    if include_fake_class_term {
        let (cls_fake, g_fake) = class_term(class_fake)?;
        obj.loss.components.push(("class_fake", cls_fake));
        obj.grads.class_fake = g_fake;
    } else {
        // Still validate the labels so a bad batch fails the same way.
        class_fake.num_classes()?;
    }
    obj.loss = LossValue::from_components(obj.loss.components);
    Ok(obj)
}

/// AC-GAN generator loss: `-mean log σ(l_fake) - mean log softmax(c_fake)[y]`.
pub fn ac_g_objective(source_fake: &[f64], class_fake: ClassLogits<'_>) -> Result<Objective> {
    let mut obj = gan_g_objective(source_fake)?;
    let (cls, g) = class_term(class_fake)?;
    obj.loss.components.push(("class_fake", cls));
    obj.loss = LossValue::from_components(obj.loss.components);
    obj.grads.class_fake = g;
    Ok(obj)
}

/// Mean squared error between sampled and recovered latents, with the
/// gradient with respect to `z_pred`.
pub fn encoder_objective(z_true: &[f64], z_pred: &[f64]) -> Result<(LossValue, Vec<f64>)> {
    if z_true.len() != z_pred.len() {
        return Err(Error::Contract(format!(
            "latent batches differ in size: {} vs {}",
            z_true.len(),
            z_pred.len()
        )));
    }
    non_empty("latent", z_true)?;
    let n = z_true.len() as f64;
    let mse = z_true
        .iter()
        .zip(z_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / n;
    let grad = z_true.iter().zip(z_pred).map(|(t, p)| 2.0 * (p - t) / n).collect();
    Ok((LossValue::from_components(vec![("mse", mse)]), grad))
}

/// Plain categorical cross-entropy over `[B, K]` logits with its gradient.
pub fn cross_entropy_objective(batch: ClassLogits<'_>) -> Result<(LossValue, Vec<f64>)> {
    let (value, grad) = class_term(batch)?;
    Ok((LossValue::from_components(vec![("cross_entropy", value)]), grad))
}

pub fn gan_d_loss(source_real: &[f64], source_fake: &[f64]) -> Result<LossValue> {
    Ok(gan_d_objective(source_real, source_fake)?.loss)
}

pub fn gan_g_loss(source_fake: &[f64]) -> Result<LossValue> {
    Ok(gan_g_objective(source_fake)?.loss)
}

pub fn ac_d_loss(
    source_real: &[f64],
    source_fake: &[f64],
    class_real: ClassLogits<'_>,
    class_fake: ClassLogits<'_>,
    include_fake_class_term: bool,
) -> Result<LossValue> {
    Ok(ac_d_objective(source_real, source_fake, class_real, class_fake, include_fake_class_term)?.loss)
}

pub fn ac_g_loss(source_fake: &[f64], class_fake: ClassLogits<'_>) -> Result<LossValue> {
    Ok(ac_g_objective(source_fake, class_fake)?.loss)
}

pub fn encoder_loss(z_true: &[f64], z_pred: &[f64]) -> Result<LossValue> {
    Ok(encoder_objective(z_true, z_pred)?.0)
}
