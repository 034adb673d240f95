//! Object-based model for binary fluvial training images.
//!
//! Each image starts as background. Sinusoidal channels with triangularly
//! distributed orientation, amplitude and wavelength are unioned in until
//! the next candidate would move the channel proportion away from the target.

mod channel;
mod triangular;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use channel::{rasterize_channel, ChannelSpec, CENTERLINE_STEP};
pub use triangular::{sample_triangular, TriangularDist};

use crate::domain::BinaryImage;
use crate::{par, seed, Error, Result};

/// Candidates tried per image before giving up.
pub const MAX_CANDIDATES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObmParams {
    /// Degrees.
    pub orientation: TriangularDist,
    /// Pixels.
    pub amplitude: TriangularDist,
    /// Pixels.
    pub wavelength: TriangularDist,
    /// Full band width in pixels.
    pub channel_width: f64,
    pub target_proportion: f64,
    pub height: usize,
    pub width: usize,
}

impl ObmParams {
    /// Defaults for an `n × n` grid: channel width `round(5 n / 128)`, at least 1.
    pub fn for_size(n: usize) -> Self {
        Self {
            orientation: TriangularDist {
                min: -60.0,
                mode: 0.0,
                max: 60.0,
            },
            amplitude: TriangularDist {
                min: 10.0,
                mode: 20.0,
                max: 30.0,
            },
            wavelength: TriangularDist {
                min: 50.0,
                mode: 75.0,
                max: 100.0,
            },
            channel_width: default_channel_width(n),
            target_proportion: 0.25,
            height: n,
            width: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.orientation.validate()?;
        self.amplitude.validate()?;
        self.wavelength.validate()?;
        if !(self.wavelength.min > 0.0) {
            return Err(Error::invalid("wavelength must be positive"));
        }
        if !(self.channel_width >= 1.0) || !self.channel_width.is_finite() {
            return Err(Error::invalid(format!(
                "channel_width must be >= 1, got {}",
                self.channel_width
            )));
        }
        if !(self.target_proportion > 0.0 && self.target_proportion < 1.0) {
            return Err(Error::invalid(format!(
                "target_proportion must lie in (0, 1), got {}",
                self.target_proportion
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("grid must be non-empty"));
        }
        Ok(())
    }

    /// Draws one channel. Consumes six uniforms in a fixed order.
    pub fn sample_channel<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelSpec {
        let orientation = sample_triangular(&self.orientation, rng.random());
        let amplitude = sample_triangular(&self.amplitude, rng.random());
        let wavelength = sample_triangular(&self.wavelength, rng.random());
        let row = rng.random::<f64>() * self.height as f64;
        let col = rng.random::<f64>() * self.width as f64;
        let phase = rng.random::<f64>() * 2.0 * PI;
        ChannelSpec {
            orientation,
            amplitude,
            wavelength,
            phase,
            anchor: (row, col),
            width: self.channel_width,
        }
    }
}

impl Default for ObmParams {
    fn default() -> Self {
        Self::for_size(128)
    }
}

pub fn default_channel_width(n: usize) -> f64 {
    (5.0 * n as f64 / 128.0).round().max(1.0)
}

/// Image plus the proportion after every accepted channel.
#[derive(Clone, Debug)]
pub struct Generation {
    pub image: BinaryImage,
    pub channels: Vec<ChannelSpec>,
    pub proportions: Vec<f64>,
    /// Proportion the first rejected candidate would have produced.
    pub rejected: Option<f64>,
}

pub fn generate_image<R: Rng + ?Sized>(params: &ObmParams, rng: &mut R) -> Result<BinaryImage> {
    generate_image_detailed(params, rng).map(|g| g.image)
}

pub fn generate_image_detailed<R: Rng + ?Sized>(
    params: &ObmParams,
    rng: &mut R,
) -> Result<Generation> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let total = (h * w) as f64;
    let target = params.target_proportion;
    let mut image = BinaryImage::zeros(h, w);
    let mut ones = 0usize;
    let mut channels = Vec::new();
    let mut proportions = Vec::new();
    let mut rejected = None;

    for _ in 0..MAX_CANDIDATES {
        let spec = params.sample_channel(rng);
        let pixels = rasterize_channel(&spec, h, w);
        if pixels.is_empty() {
            continue;
        }
        let fresh = pixels
            .iter()
            .filter(|&&(r, c)| image.get(r, c) == 0)
            .count();
        let before = ones as f64 / total;
        let after = (ones + fresh) as f64 / total;
        if !channels.is_empty() && (after - target).abs() > (before - target).abs() {
            rejected = Some(after);
            break;
        }
        for (r, c) in pixels {
            image.mark(r, c);
        }
        ones += fresh;
        channels.push(spec);
        proportions.push(after);
    }

    let p = ones as f64 / total;
    if channels.is_empty() || (p - target).abs() > 0.5 * target {
        return Err(Error::Calibration(format!(
            "proportion {p:.4} is not within half of target {target} after {} channels",
            channels.len()
        )));
    }
    Ok(Generation {
        image,
        channels,
        proportions,
        rejected,
    })
}

/// `count` images; image `i` uses stream `i` under `base_seed`, so the result
/// does not depend on the worker count.
pub fn generate_dataset(
    params: &ObmParams,
    count: usize,
    base_seed: u64,
) -> Result<Vec<BinaryImage>> {
    if count == 0 {
        return Err(Error::invalid("dataset count must be at least 1"));
    }
    params.validate()?;
    par::map_range(count, |i| {
        let mut rng = seed::stream(base_seed, i as u64);
        generate_image(params, &mut rng)
    })
    .into_iter()
    .collect()
}
