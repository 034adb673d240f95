use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::GanModel;
use crate::diffnet::{AdamState, Mode, Tensor};
use crate::domain::BinaryImage;
use crate::seed::{self, Purpose};
use crate::{par, Error, Result};

/// Discriminator outputs are clamped to `[PROB_EPS, 1 − PROB_EPS]` before
/// taking logs.
pub const PROB_EPS: f64 = 1e-7;

fn clamp_prob(p: f32) -> f64 {
    (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `−mean log D(x) − mean log(1 − D(G(z)))`.
pub fn discriminator_loss(p_real: &[f32], p_fake: &[f32]) -> f64 {
    let real = p_real.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>() / p_real.len() as f64;
    let fake = p_fake
        .iter()
        .map(|&p| -(1.0 - clamp_prob(p)).ln())
        .sum::<f64>()
        / p_fake.len() as f64;
    real + fake
}

/// Non-saturating generator loss `−mean log D(G(z))`.
fn generator_loss(p_fake: &[f32]) -> f64 {
    p_fake.iter().map(|&p| -clamp_prob(p).ln()).sum::<f64>() / p_fake.len() as f64
}

/// Gradient of the mean cross-entropy with respect to the logits below the
/// final sigmoid: `(p − label) / B`.
fn logit_grad(p: &Tensor, label: f32) -> Tensor {
    let b = p.len() as f32;
    p.map(|v| (v - label) / b)
}

fn fraction(p: &[f32], real: bool) -> f64 {
    p.iter()
        .filter(|&&v| if real { v > 0.5 } else { v < 0.5 })
        .count() as f64
        / p.len() as f64
}

/// Encodes binary images as a `[N, 1, h, w]` tensor with values ±1.
pub fn images_to_tensor(images: &[BinaryImage]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("no images"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::shape("images differ in size"));
        }
        data.extend(
            img.data()
                .iter()
                .map(|&b| if b == 1 { 1.0f32 } else { -1.0 }),
        );
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    /// 1-based epoch number.
    pub epoch: usize,
    pub batches: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real_accuracy: f64,
    pub d_fake_accuracy: f64,
    /// Share of generated pixels at or above zero over the epoch.
    pub fake_proportion: f64,
}

impl fmt::Display for EpochSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} batches={} d_loss={:.6} g_loss={:.6} d_acc_real={:.4} d_acc_fake={:.4} fake_proportion={:.4}",
            self.epoch,
            self.batches,
            self.d_loss,
            self.g_loss,
            self.d_real_accuracy,
            self.d_fake_accuracy,
            self.fake_proportion
        )
    }
}

/// Adversarial training state: the model plus one Adam state per network.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: GanModel,
    g_opt: AdamState,
    d_opt: AdamState,
    epochs_done: usize,
}

#[derive(Default)]
struct Totals {
    batches: usize,
    d_loss: f64,
    g_loss: f64,
    real_acc: f64,
    fake_acc: f64,
    fake_pos: usize,
    fake_px: usize,
}

impl Trainer {
    pub fn new(model: GanModel) -> Self {
        let adam = model.config.adam;
        Self {
            g_opt: AdamState::for_network(adam, &model.generator),
            d_opt: AdamState::for_network(adam, &model.discriminator),
            model,
            epochs_done: 0,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn into_model(self) -> GanModel {
        self.model
    }

    /// One Adam step of the discriminator on `−log D(real) − log(1 − D(fake))`.
    /// Returns the loss and the pre-step accuracies on real and fake.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor) -> Result<(f64, f64, f64)> {
        let d = &mut self.model.discriminator;
        d.zero_grad();
        let (p_real, tr) = d.forward(real, Mode::Train)?;
        d.backward_below(&tr, 1, &logit_grad(&p_real, 1.0))?;
        let (p_fake, tf) = d.forward(fake, Mode::Train)?;
        d.backward_below(&tf, 1, &logit_grad(&p_fake, 0.0))?;
        let loss = discriminator_loss(p_real.data(), p_fake.data());
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {loss}")));
        }
        self.d_opt.step_network(d)?;
        d.update_running_stats(&tr)?;
        d.update_running_stats(&tf)?;
        Ok((
            loss,
            fraction(p_real.data(), true),
            fraction(p_fake.data(), false),
        ))
    }

    fn noise(&self, batch_index: usize, size: usize) -> Result<Tensor> {
        let dim = self.model.latent_dim();
        let index = ((self.epochs_done as u64) << 32) | batch_index as u64;
        let mut rng = seed::purpose_stream(self.model.config.seed, Purpose::Noise, index);
        Tensor::from_vec(
            &[size, dim],
            (0..size * dim)
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        )
    }

    /// One pass over `data` (`[N, 1, n, n]`, values ±1) in shuffled
    /// batches. Each batch takes one discriminator step and then one
    /// generator step on the same fake batch.
    pub fn train_epoch(&mut self, data: &Tensor) -> Result<EpochSummary> {
        let n = self.model.image_size();
        if data.shape().len() != 4 || data.shape()[1..] != [1, n, n] {
            return Err(Error::shape(format!(
                "training data {:?} is not [N, 1, {n}, {n}]",
                data.shape()
            )));
        }
        let count = data.batch();
        let bs = self.model.config.batch_size;
        if count < 2 {
            return Err(Error::invalid("training needs at least 2 images"));
        }
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut seed::purpose_stream(
            self.model.config.seed,
            Purpose::Shuffle,
            epoch as u64,
        ));
        let per = n * n;
        let mut t = Totals::default();
        for (bi, idx) in order.chunks(bs).enumerate() {
            // Batch statistics need at least two samples.
            if idx.len() < 2 {
                continue;
            }
            let mut px = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                px.extend_from_slice(&data.data()[i * per..(i + 1) * per]);
            }
            let real = Tensor::from_vec(&[idx.len(), 1, n, n], px)?;
            let z = self.noise(bi, idx.len())?;
            let (fake, g_trace) = self.model.generator.forward(&z, Mode::Train)?;

            let (d_loss, real_acc, fake_acc) =
                self.discriminator_step(&real, &fake).map_err(|e| match e {
                    Error::NonFinite(m) => {
                        Error::NonFinite(format!("epoch {epoch} batch {bi}: {m}"))
                    }
                    other => other,
                })?;

            let (p, trace) = self.model.discriminator.forward(&fake, Mode::Train)?;
            let g_loss = generator_loss(p.data());
            if !g_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch} batch {bi}: d_loss {d_loss} g_loss {g_loss}"
                )));
            }
            let d_img =
                self.model
                    .discriminator
                    .backward_input_below(&trace, 1, &logit_grad(&p, 1.0))?;
            let g = &mut self.model.generator;
            g.zero_grad();
            g.backward(&g_trace, &d_img)?;
            self.g_opt.step_network(g)?;
            g.update_running_stats(&g_trace)?;

            t.batches += 1;
            t.d_loss += d_loss;
            t.g_loss += g_loss;
            t.real_acc += real_acc;
            t.fake_acc += fake_acc;
            t.fake_pos += fake.data().iter().filter(|&&v| v >= 0.0).count();
            t.fake_px += fake.len();
        }
        self.epochs_done = epoch;
        let b = t.batches.max(1) as f64;
        Ok(EpochSummary {
            epoch,
            batches: t.batches,
            d_loss: t.d_loss / b,
            g_loss: t.g_loss / b,
            d_real_accuracy: t.real_acc / b,
            d_fake_accuracy: t.fake_acc / b,
            fake_proportion: t.fake_pos as f64 / t.fake_px.max(1) as f64,
        })
    }
}

/// Discriminator accuracy on unseen real images and an equal number of
/// fresh generator samples: the share of real images scored above 0.5 and
/// fakes scored below it.
pub fn heldout_accuracy(model: &GanModel, real: &Tensor, seed_value: u64) -> Result<f64> {
    let count = real.batch();
    if count == 0 {
        return Err(Error::invalid("no held-out images"));
    }
    let dim = model.latent_dim();
    let zs: Vec<Vec<f32>> = (0..count as u64)
        .map(|i| {
            let mut rng = seed::purpose_stream(seed_value, Purpose::Holdout, i);
            (0..dim).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect();
    let fakes = model.decode(&zs)?;
    let n = model.image_size();
    let mut px = Vec::with_capacity(count * n * n);
    for img in &fakes {
        px.extend_from_slice(img.data());
    }
    let fake = Tensor::from_vec(&[count, 1, n, n], px)?;
    let score = |x: &Tensor, is_real: bool| -> Result<usize> {
        let chunks = count.div_ceil(64);
        let parts = par::map_range(chunks, |c| -> Result<usize> {
            let len = 64.min(count - c * 64);
            let p = model.discriminate(&x.batch_slice(c * 64, len)?)?;
            Ok(p.data()
                .iter()
                .filter(|&&v| if is_real { v > 0.5 } else { v < 0.5 })
                .count())
        });
        parts.into_iter().sum()
    };
    Ok((score(real, true)? + score(&fake, false)?) as f64 / (2 * count) as f64)
}
