//! Conditioning: latent-vector optimization that makes generated images
//! honor point measurements.
//!
//! For a latent `z` the objective is
//! `L(z) = Σ M̃·|G(z) − ỹ| + λ·log(1 − D(G(z)))`, minimized with Adam over
//! `z` only while both networks stay fixed. Several restarts run side by
//! side as one batch.

mod mask;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diffnet::{AdamConfig, AdamState, Mode, Network, Real, Tensor};
use crate::domain::{MeasurementSet, RealImage};
use crate::gan::{GanModel, PROB_EPS};
use crate::seed::{self, Purpose};
use crate::{Error, Result};

pub use mask::{auto_radius, context_loss, expand_mask, offset_weight, ExpandedMask};

/// `log(1 − D)` with `D` clamped to `[ε, 1 − ε]`.
pub fn prior_term(p: f64) -> f64 {
    (1.0 - p.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Radius {
    #[default]
    Auto,
    Fixed(usize),
}

impl Radius {
    pub fn resolve(self, measurements: usize) -> usize {
        match self {
            Radius::Auto => auto_radius(measurements.max(1)),
            Radius::Fixed(r) => r,
        }
    }
}

impl std::str::FromStr for Radius {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Radius::Auto);
        }
        s.parse().map(Radius::Fixed).map_err(|_| {
            Error::invalid(format!("radius must be a pixel count or `auto`, got `{s}`"))
        })
    }
}

impl Serialize for Radius {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Radius::Auto => s.serialize_str("auto"),
            Radius::Fixed(r) => s.serialize_u64(*r as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Pixels(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Pixels(r) => Ok(Radius::Fixed(r)),
            Raw::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    pub lambda: f64,
    pub lr: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub restarts: usize,
    pub radius: Radius,
    pub seed: u64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            lr: 1e-2,
            iterations: 1500,
            beta1: 0.9,
            beta2: 0.999,
            restarts: 20,
            radius: Radius::Auto,
            seed: 0,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::with_default_betas(self.lr)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub context: f64,
    pub prior: f64,
}

/// Losses, images and latent gradients for a batch of latent vectors.
#[derive(Clone, Debug)]
pub struct Evaluation<T: Real = f32> {
    pub parts: Vec<LossParts>,
    /// `[k, 1, h, w]` generator output.
    pub images: Tensor<T>,
    /// `∂total/∂z`, `[k, latent_dim]`.
    pub grad: Tensor<T>,
}

/// A generator/discriminator pair that can be conditioned.
pub trait Conditionable: Sync {
    fn latent_dim(&self) -> usize;
    fn grid(&self) -> (usize, usize);
    fn evaluate(&self, z: &Tensor, mask: &ExpandedMask, lambda: f64) -> Result<Evaluation>;
}

fn check_latents<T: Real>(z: &Tensor<T>, dim: usize) -> Result<usize> {
    match *z.shape() {
        [k, d] if d == dim && k > 0 => Ok(k),
        ref s => Err(Error::shape(format!(
            "latents must be [k, {dim}], got {s:?}"
        ))),
    }
}

/// Context part of [`Evaluation`]: per-image losses and `∂/∂image`.
fn context_terms<T: Real>(images: &Tensor<T>, mask: &ExpandedMask) -> (Vec<f64>, Tensor<T>) {
    let px = mask.height() * mask.width();
    let mut grad = Tensor::zeros(images.shape());
    let mut losses = Vec::with_capacity(images.batch());
    for (img, g) in images.data().chunks(px).zip(grad.data_mut().chunks_mut(px)) {
        let mut sum = 0.0;
        for (i, (&v, &w)) in img.iter().zip(mask.weights()).enumerate() {
            if w > 0.0 {
                let diff = v.to_f64().unwrap() - mask.targets()[i];
                sum += w * diff.abs();
                g[i] = T::lit(w * diff.signum() * f64::from(u8::from(diff != 0.0)));
            }
        }
        losses.push(sum);
    }
    (losses, grad)
}

/// Total loss and latent gradient through a generator and discriminator in
/// eval mode. The discriminator must end in a sigmoid.
pub fn evaluate_networks<T: Real>(
    generator: &Network<T>,
    discriminator: &Network<T>,
    z: &Tensor<T>,
    mask: &ExpandedMask,
    lambda: f64,
) -> Result<Evaluation<T>> {
    let (images, g_trace) = generator.forward(z, Mode::Eval)?;
    let px = mask.height() * mask.width();
    if images.len() != images.batch() * px {
        return Err(Error::shape(format!(
            "generator output {:?} does not match a {}x{} mask",
            images.shape(),
            mask.height(),
            mask.width()
        )));
    }
    let (p, d_trace) = discriminator.forward(&images, Mode::Eval)?;
    let (context, mut d_img) = context_terms(&images, mask);
    // d/da log(1 − σ(a)) = −σ(a); zero where the clamp is active.
    let d_logit = p.map(|v| {
        let pv = v.to_f64().unwrap();
        if (PROB_EPS..=1.0 - PROB_EPS).contains(&pv) {
            T::lit(-lambda * pv)
        } else {
            T::zero()
        }
    });
    let through_d = discriminator.backward_input_below(&d_trace, 1, &d_logit)?;
    for (a, b) in d_img.data_mut().iter_mut().zip(through_d.data()) {
        *a = *a + *b;
    }
    let grad = generator.backward_input(&g_trace, &d_img)?;
    let parts = context
        .into_iter()
        .zip(p.data())
        .map(|(c, &pv)| {
            let prior = prior_term(pv.to_f64().unwrap());
            LossParts {
                total: c + lambda * prior,
                context: c,
                prior,
            }
        })
        .collect();
    Ok(Evaluation {
        parts,
        images,
        grad,
    })
}

impl Conditionable for GanModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn grid(&self) -> (usize, usize) {
        (self.config.image_size, self.config.image_size)
    }

    fn evaluate(&self, z: &Tensor, mask: &ExpandedMask, lambda: f64) -> Result<Evaluation> {
        check_latents(z, self.latent_dim())?;
        evaluate_networks(&self.generator, &self.discriminator, z, mask, lambda)
    }
}

/// Closed-form test model: the generator reshapes `z` into the image and
/// the discriminator always answers 0.5.
#[derive(Clone, Copy, Debug)]
pub struct IdentityHarness {
    pub height: usize,
    pub width: usize,
}

impl Conditionable for IdentityHarness {
    fn latent_dim(&self) -> usize {
        self.height * self.width
    }

    fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn evaluate(&self, z: &Tensor, mask: &ExpandedMask, lambda: f64) -> Result<Evaluation> {
        let k = check_latents(z, self.latent_dim())?;
        let images = z.clone().reshape(&[k, 1, self.height, self.width])?;
        let (context, d_img) = context_terms(&images, mask);
        let prior = prior_term(0.5);
        let parts = context
            .into_iter()
            .map(|c| LossParts {
                total: c + lambda * prior,
                context: c,
                prior,
            })
            .collect();
        let grad = d_img.reshape(&[k, self.latent_dim()])?;
        Ok(Evaluation {
            parts,
            images,
            grad,
        })
    }
}

fn single<M: Conditionable + ?Sized>(
    model: &M,
    z: &[f32],
    mask: &ExpandedMask,
    lambda: f64,
) -> Result<Evaluation> {
    model.evaluate(&Tensor::from_vec(&[1, z.len()], z.to_vec())?, mask, lambda)
}

/// `log(1 − D(G(z)))` for one latent vector.
pub fn prior_loss<M: Conditionable + ?Sized>(model: &M, z: &[f32]) -> Result<f64> {
    let (h, w) = model.grid();
    let empty = expand_mask(&MeasurementSet::default(), 0, (h, w))?;
    Ok(single(model, z, &empty, 0.0)?.parts[0].prior)
}

/// Total loss and its gradient for one latent vector.
pub fn total_loss<M: Conditionable + ?Sized>(
    model: &M,
    z: &[f32],
    mask: &ExpandedMask,
    lambda: f64,
) -> Result<(LossParts, Vec<f32>)> {
    let e = single(model, z, mask, lambda)?;
    let parts = e.parts[0];
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "context loss {} prior loss {}",
            parts.context, parts.prior
        )));
    }
    Ok((parts, e.grad.into_data()))
}

/// Fraction of measurements reproduced by the thresholded image.
pub fn honor_rate(image: &RealImage, measurements: &MeasurementSet) -> f64 {
    if measurements.is_empty() {
        return 1.0;
    }
    let hits = measurements
        .iter()
        .filter(|m| u8::from(image.get(m.row, m.col) >= 0.0) == m.rock)
        .count();
    hits as f64 / measurements.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    /// Index of the restart that produced this realization.
    pub restart: usize,
    pub image: RealImage,
    pub latent: Vec<f32>,
    pub total_loss: f64,
    pub context_loss: f64,
    pub prior_loss: f64,
    pub honor_rate: f64,
}

/// Initial latent vector of restart `i`.
pub fn restart_latent(seed_value: u64, index: usize, dim: usize) -> Vec<f32> {
    let mut rng = seed::purpose_stream(seed_value, Purpose::Restart, index as u64);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs `config.restarts` independent optimizations and returns their
/// results sorted by total loss, lowest first.
pub fn condition<M: Conditionable + ?Sized>(
    model: &M,
    measurements: &MeasurementSet,
    config: &InpaintConfig,
) -> Result<Vec<Realization>> {
    config.validate()?;
    let (h, w) = model.grid();
    let radius = config.radius.resolve(measurements.len());
    let mask = expand_mask(measurements, radius, (h, w))?;
    let (k, d) = (config.restarts, model.latent_dim());
    let mut flat = Vec::with_capacity(k * d);
    for i in 0..k {
        flat.extend(restart_latent(config.seed, i, d));
    }
    let mut z = Tensor::from_vec(&[k, d], flat)?;
    // Adam is elementwise, so one state over the stacked latents equals an
    // independent state per restart.
    let mut adam = AdamState::new(config.adam(), &[k * d]);
    let check = |e: &Evaluation, it: usize| -> Result<()> {
        match e.parts.iter().position(|p| !p.total.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "restart {i} iteration {it}: context loss {} prior loss {}",
                e.parts[i].context, e.parts[i].prior
            ))),
        }
    };
    for it in 0..config.iterations {
        let e = model.evaluate(&z, &mask, config.lambda)?;
        check(&e, it)?;
        adam.step(&mut [z.data_mut()], &[e.grad.data()])?;
    }
    let e = model.evaluate(&z, &mask, config.lambda)?;
    check(&e, config.iterations)?;
    let px = h * w;
    let mut out = Vec::with_capacity(k);
    for (i, parts) in e.parts.iter().enumerate() {
        let image = RealImage::from_clamped(h, w, &e.images.data()[i * px..(i + 1) * px])?;
        out.push(Realization {
            restart: i,
            honor_rate: honor_rate(&image, measurements),
            image,
            latent: z.data()[i * d..(i + 1) * d].to_vec(),
            total_loss: parts.total,
            context_loss: parts.context,
            prior_loss: parts.prior,
        });
    }
    out.sort_by(|a, b| a.total_loss.total_cmp(&b.total_loss));
    Ok(out)
}
