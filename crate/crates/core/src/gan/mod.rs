//! DC-GAN construction, sampling, latent traversal and checkpoint I/O.
//!
//! The discriminator is four 4×4 stride-2 convolutions of widths 64, 128,
//! 256 and 32 followed by a dense layer to one sigmoid unit. The generator
//! mirrors it: dense to `32·(n/16)²`, reshape to 32 channels, then
//! transposed convolutions of widths 256, 128, 64 and 1 ending in tanh.

mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffnet::gradcheck::{self, GradCheck};
use crate::diffnet::{AdamConfig, Checkpoint, LayerSpec, Mode, Network, Tensor};
use crate::domain::RealImage;
use crate::seed::{self, Purpose};
use crate::{par, Error, Result};

pub use train::{
    discriminator_loss, heldout_accuracy, images_to_tensor, EpochSummary, Trainer, PROB_EPS,
};

pub const SUPPORTED_SIZES: [usize; 3] = [32, 64, 128];
pub const DISCRIMINATOR_WIDTHS: [usize; 4] = [64, 128, 256, 32];
pub const GENERATOR_WIDTHS: [usize; 4] = [256, 128, 64, 1];
pub const LEAK: f64 = 0.2;
/// Samples pushed through the generator at once when sampling.
const SAMPLE_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub image_size: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub batch_norm: bool,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            latent_dim: 100,
            batch_size: 64,
            epochs: 500,
            adam: AdamConfig::gan_training(),
            batch_norm: true,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_SIZES.contains(&self.image_size) {
            return Err(Error::invalid(format!(
                "image size {} not supported, use one of {SUPPORTED_SIZES:?}",
                self.image_size
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        self.adam.validate()
    }

    /// Features entering the discriminator's dense layer.
    pub fn flat_features(&self) -> usize {
        flat_features(self.image_size)
    }
}

pub fn flat_features(n: usize) -> usize {
    32 * (n / 16) * (n / 16)
}

/// Layer stack of the discriminator. With `batch_norm` every hidden
/// convolution but the first is normalized.
pub fn discriminator_specs(n: usize, batch_norm: bool) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut c_in = 1;
    for (i, &c) in DISCRIMINATOR_WIDTHS.iter().enumerate() {
        specs.push(LayerSpec::Conv {
            in_channels: c_in,
            out_channels: c,
        });
        if batch_norm && i > 0 {
            specs.push(LayerSpec::BatchNorm { channels: c });
        }
        specs.push(LayerSpec::LeakyRelu(LEAK));
        c_in = c;
    }
    let f = flat_features(n);
    specs.push(LayerSpec::Reshape(vec![f]));
    specs.push(LayerSpec::Dense {
        in_features: f,
        out_features: 1,
    });
    specs.push(LayerSpec::Sigmoid);
    specs
}

/// Layer stack of the generator. With `batch_norm` the projected features
/// and every hidden transposed convolution are normalized.
pub fn generator_specs(n: usize, latent_dim: usize, batch_norm: bool) -> Vec<LayerSpec> {
    let s = n / 16;
    let mut specs = vec![
        LayerSpec::Dense {
            in_features: latent_dim,
            out_features: flat_features(n),
        },
        LayerSpec::Reshape(vec![32, s, s]),
    ];
    if batch_norm {
        specs.push(LayerSpec::BatchNorm { channels: 32 });
    }
    specs.push(LayerSpec::Relu);
    let mut c_in = 32;
    for (i, &c) in GENERATOR_WIDTHS.iter().enumerate() {
        specs.push(LayerSpec::ConvTranspose {
            in_channels: c_in,
            out_channels: c,
        });
        if i + 1 < GENERATOR_WIDTHS.len() {
            if batch_norm {
                specs.push(LayerSpec::BatchNorm { channels: c });
            }
            specs.push(LayerSpec::Relu);
        }
        c_in = c;
    }
    specs.push(LayerSpec::Tanh);
    specs
}

#[derive(Clone, Debug)]
pub struct GanModel {
    pub config: GanConfig,
    pub generator: Network<f32>,
    pub discriminator: Network<f32>,
}

pub fn build(config: &GanConfig) -> Result<GanModel> {
    config.validate()?;
    let n = config.image_size;
    let generator = Network::new(
        &generator_specs(n, config.latent_dim, config.batch_norm),
        &mut seed::purpose_stream(config.seed, Purpose::Init, 0),
    )?;
    let discriminator = Network::new(
        &discriminator_specs(n, config.batch_norm),
        &mut seed::purpose_stream(config.seed, Purpose::Init, 1),
    )?;
    Ok(GanModel {
        config: config.clone(),
        generator,
        discriminator,
    })
}

impl GanModel {
    pub fn image_size(&self) -> usize {
        self.config.image_size
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// `G(z)` for a `[B, latent_dim]` batch, using running statistics.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 2 || z.shape()[1] != self.latent_dim() {
            return Err(Error::shape(format!(
                "latent batch {:?} does not match latent_dim {}",
                z.shape(),
                self.latent_dim()
            )));
        }
        self.generator.predict(z)
    }

    /// `D(x)` for a `[B, 1, n, n]` batch.
    pub fn discriminate(&self, x: &Tensor) -> Result<Tensor> {
        self.discriminator.predict(x)
    }

    /// Decodes latent vectors in fixed-size chunks.
    pub fn decode(&self, latents: &[Vec<f32>]) -> Result<Vec<RealImage>> {
        let n = self.image_size();
        let chunks: Vec<&[Vec<f32>]> = latents.chunks(SAMPLE_BATCH).collect();
        let decoded = par::map_range(chunks.len(), |i| -> Result<Vec<RealImage>> {
            let chunk = chunks[i];
            let mut flat = Vec::with_capacity(chunk.len() * self.latent_dim());
            for z in chunk {
                if z.len() != self.latent_dim() {
                    return Err(Error::shape(format!(
                        "latent vector has {} entries, expected {}",
                        z.len(),
                        self.latent_dim()
                    )));
                }
                flat.extend_from_slice(z);
            }
            let out = self.generate(&Tensor::from_vec(&[chunk.len(), self.latent_dim()], flat)?)?;
            out.data()
                .chunks(n * n)
                .map(|px| RealImage::from_clamped(n, n, px))
                .collect()
        });
        let mut images = Vec::with_capacity(latents.len());
        for part in decoded {
            images.extend(part?);
        }
        Ok(images)
    }

    pub fn to_checkpoint(&self, epochs_completed: usize) -> Checkpoint {
        let c = &self.config;
        let metadata = format!(
            "kind=gan\nimage_size={}\nlatent_dim={}\nbatch_norm={}\nseed={}\nbatch_size={}\nepochs={}\n",
            c.image_size, c.latent_dim, c.batch_norm, c.seed, c.batch_size, epochs_completed
        );
        let mut tensors = Vec::new();
        for (prefix, net) in [("G", &self.generator), ("D", &self.discriminator)] {
            for (name, t) in net.named_tensors() {
                let mut t = t.clone();
                t.clear_grad();
                tensors.push((format!("{prefix}.{name}"), t));
            }
        }
        Checkpoint { metadata, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |key: &str| -> Result<&str> {
            ck.meta(key)
                .ok_or_else(|| Error::format(0, format!("checkpoint metadata lacks `{key}`")))
        };
        let number = |key: &str| -> Result<usize> {
            field(key)?
                .parse()
                .map_err(|_| Error::format(0, format!("checkpoint `{key}` is not an integer")))
        };
        if field("kind")? != "gan" {
            return Err(Error::format(0, "checkpoint does not hold a GAN"));
        }
        let batch_norm = match field("batch_norm")? {
            "true" => true,
            "false" => false,
            other => return Err(Error::format(0, format!("bad batch_norm flag `{other}`"))),
        };
        let config = GanConfig {
            image_size: number("image_size")?,
            latent_dim: number("latent_dim")?,
            batch_size: number("batch_size")?,
            batch_norm,
            seed: field("seed")?
                .parse()
                .map_err(|_| Error::format(0, "checkpoint `seed` is not an integer"))?,
            ..GanConfig::default()
        };
        let mut model = build(&config)?;
        let mut used = 0;
        for (prefix, net) in [("G", &mut model.generator), ("D", &mut model.discriminator)] {
            for (name, t) in net.named_tensors_mut() {
                let key = format!("{prefix}.{name}");
                let src = ck
                    .tensor(&key)
                    .ok_or_else(|| Error::format(0, format!("checkpoint lacks tensor `{key}`")))?;
                if src.shape() != t.shape() {
                    return Err(Error::format(
                        0,
                        format!(
                            "tensor `{key}` has shape {:?}, expected {:?}",
                            src.shape(),
                            t.shape()
                        ),
                    ));
                }
                t.data_mut().copy_from_slice(src.data());
                used += 1;
            }
        }
        if used != ck.tensors.len() {
            return Err(Error::format(
                0,
                "checkpoint holds tensors the model does not use",
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>, epochs_completed: usize) -> Result<()> {
        self.to_checkpoint(epochs_completed).write(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Standard-normal latent vector `index` under `seed`.
pub fn latent(seed_value: u64, index: u64, dim: usize) -> Vec<f32> {
    let mut rng = seed::purpose_stream(seed_value, Purpose::Latent, index);
    (0..dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect()
}

/// `count` unconditional samples; sample `i` depends only on `seed` and `i`.
pub fn sample(model: &GanModel, count: usize, seed_value: u64) -> Result<Vec<RealImage>> {
    let zs: Vec<Vec<f32>> = (0..count as u64)
        .map(|i| latent(seed_value, i, model.latent_dim()))
        .collect();
    model.decode(&zs)
}

/// How the spread of traversal endpoints is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointSpread {
    /// `N(0, 2)` with variance 2.
    #[default]
    Variance2,
    /// `N(0, 2)` with standard deviation 2.
    Std2,
}

impl EndpointSpread {
    pub fn std(self) -> f32 {
        match self {
            EndpointSpread::Variance2 => std::f32::consts::SQRT_2,
            EndpointSpread::Std2 => 2.0,
        }
    }
}

/// Two traversal endpoints drawn from `N(0, 2)`.
pub fn traversal_endpoints(
    seed_value: u64,
    dim: usize,
    spread: EndpointSpread,
) -> (Vec<f32>, Vec<f32>) {
    let s = spread.std();
    let scale = |z: Vec<f32>| z.into_iter().map(|v| v * s).collect::<Vec<_>>();
    (
        scale(latent(seed_value, 0, dim)),
        scale(latent(seed_value, 1, dim)),
    )
}

/// Images `G((1−t)·z1 + t·z2)` for `t = k/(steps−1)`.
pub fn traverse(model: &GanModel, z1: &[f32], z2: &[f32], steps: usize) -> Result<Vec<RealImage>> {
    if steps < 2 {
        return Err(Error::invalid("traversal needs at least 2 steps"));
    }
    let d = model.latent_dim();
    if z1.len() != d || z2.len() != d {
        return Err(Error::shape(format!(
            "endpoints have {} and {} entries, expected {d}",
            z1.len(),
            z2.len()
        )));
    }
    let zs: Vec<Vec<f32>> = (0..steps)
        .map(|k| {
            let t = k as f32 / (steps - 1) as f32;
            z1.iter()
                .zip(z2)
                .map(|(&a, &b)| (1.0 - t) * a + t * b)
                .collect()
        })
        .collect();
    model.decode(&zs)
}

/// Finite-difference check of `D(G(z))` with respect to `z` and sampled
/// parameters of both networks, on a freshly built `n = 32` model in `f64`.
pub fn composed_gradcheck(step: f64, tolerance: f64) -> Result<Vec<GradCheck>> {
    let model = build(&GanConfig {
        image_size: 32,
        seed: 17,
        ..GanConfig::default()
    })?;
    let g = model.generator.cast::<f64>();
    let d = model.discriminator.cast::<f64>();
    let mut rng = seed::stream(18, 0);
    let z = Tensor::from_vec(
        &[3, model.latent_dim()],
        (0..3 * model.latent_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )?;
    gradcheck::check_composed(&g, &d, &z, Mode::Train, 10, step, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GanModel {
        build(&GanConfig {
            image_size: 32,
            seed,
            ..GanConfig::default()
        })
        .unwrap()
    }

    fn dense_shapes(net: &Network<f32>) -> Vec<(usize, usize)> {
        net.specs()
            .iter()
            .filter_map(|s| match *s {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => Some((in_features, out_features)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn dense_layers_follow_scaling_rule() {
        let m = small(0);
        assert_eq!(dense_shapes(&m.generator), [(100, 128)]);
        assert_eq!(dense_shapes(&m.discriminator), [(128, 1)]);
        for (n, f) in [(64, 512), (128, 2048)] {
            assert_eq!(flat_features(n), f);
        }
    }

    #[test]
    fn unsupported_size_is_rejected() {
        for n in [16, 48, 256] {
            assert!(build(&GanConfig {
                image_size: n,
                ..GanConfig::default()
            })
            .is_err());
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (a, b, c) = (small(4), small(4), small(5));
        let flat = |m: &GanModel| -> Vec<f32> {
            m.generator
                .params()
                .chain(m.discriminator.params())
                .flat_map(|t| t.data().to_vec())
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
        assert_eq!(a.generator.param_count(), c.generator.param_count());
    }

    #[test]
    fn batch_norm_flag_changes_stacks() {
        let plain = discriminator_specs(32, false);
        assert!(!plain
            .iter()
            .any(|s| matches!(s, LayerSpec::BatchNorm { .. })));
        assert_eq!(
            discriminator_specs(32, true)
                .iter()
                .filter(|s| s.name() == "batch_norm")
                .count(),
            3
        );
        assert_eq!(
            generator_specs(32, 100, true)
                .iter()
                .filter(|s| s.name() == "batch_norm")
                .count(),
            4
        );
    }

    #[test]
    fn samples_are_deterministic_and_in_range() {
        let m = small(1);
        let a = sample(&m, 3, 9).unwrap();
        assert_eq!(a, sample(&m, 3, 9).unwrap());
        assert_ne!(a, sample(&m, 3, 10).unwrap());
        assert!(a
            .iter()
            .all(|img| img.data().iter().all(|v| (-1.0..=1.0).contains(v))));
        // Sample i does not depend on how many are drawn alongside it.
        assert_eq!(&sample(&m, 70, 9).unwrap()[..3], &a[..]);
    }

    #[test]
    fn traversal_endpoints_match_samples() {
        let m = small(2);
        let z1 = latent(3, 0, 100);
        let z2 = latent(3, 1, 100);
        let two = traverse(&m, &z1, &z2, 2).unwrap();
        assert_eq!(two, sample(&m, 2, 3).unwrap());
        let flat = traverse(&m, &z1, &z1, 5).unwrap();
        assert!(flat.windows(2).all(|w| w[0] == w[1]));
        assert!(traverse(&m, &z1, &z2, 1).is_err());
        assert!(traverse(&m, &z1[..10], &z2, 3).is_err());
    }

    #[test]
    fn endpoint_spread() {
        let (a, _) = traversal_endpoints(1, 4, EndpointSpread::Variance2);
        let z = latent(1, 0, 4);
        for (x, y) in a.iter().zip(&z) {
            assert!((x - y * 2f32.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn composed_graph_gradients() {
        for r in composed_gradcheck(gradcheck::COMPOSED_STEP, gradcheck::DEFAULT_TOLERANCE).unwrap()
        {
            assert_eq!(r.checked, 10, "{}", r.name);
            assert!(
                r.passed(),
                "{} max rel error {:.3e}",
                r.name,
                r.max_rel_error
            );
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small(6);
        let back = GanModel::from_checkpoint(
            &Checkpoint::decode(&m.to_checkpoint(3).encode().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back.config.image_size, 32);
        let named = |m: &GanModel| -> Vec<(String, Vec<f32>)> {
            m.generator
                .named_tensors()
                .into_iter()
                .chain(m.discriminator.named_tensors())
                .map(|(n, t)| (n, t.data().to_vec()))
                .collect()
        };
        assert_eq!(named(&m), named(&back));
        let mut ck = m.to_checkpoint(0);
        ck.tensors.pop();
        assert!(GanModel::from_checkpoint(&ck).is_err());
    }
}
