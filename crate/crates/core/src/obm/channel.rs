use std::f64::consts::PI;

use crate::{Error, Result};

/// Spacing of the sampled centerline parameter, in pixels.
pub const CENTERLINE_STEP: f64 = 0.1;

/// One sinusoidal channel.
///
/// The centerline is `anchor + R(orientation) · (t, amplitude · sin(2πt / wavelength + phase))`
/// in `(row, col)` coordinates, where `t` runs along the channel axis. At
/// orientation 0 the axis follows the columns; positive angles turn it
/// toward decreasing rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSpec {
    /// Degrees.
    pub orientation: f64,
    pub amplitude: f64,
    pub wavelength: f64,
    /// Radians.
    pub phase: f64,
    /// `(row, col)`.
    pub anchor: (f64, f64),
    /// Full band width in pixels.
    pub width: f64,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) || !(self.width >= 1.0) {
            return Err(Error::invalid(format!(
                "channel needs wavelength > 0 and width >= 1, got {} and {}",
                self.wavelength, self.width
            )));
        }
        Ok(())
    }

    /// Centerline samples at `t = -L + k·step` for the grid diagonal `L`.
    pub fn centerline(&self, height: usize, width: usize) -> Vec<(f64, f64)> {
        let diag = ((height * height + width * width) as f64).sqrt();
        let steps = (2.0 * diag / CENTERLINE_STEP).ceil() as usize;
        let theta = self.orientation.to_radians();
        let (dir_r, dir_c) = (-theta.sin(), theta.cos());
        let (nrm_r, nrm_c) = (theta.cos(), theta.sin());
        (0..=steps)
            .map(|k| {
                let t = -diag + k as f64 * CENTERLINE_STEP;
                let s = self.amplitude * (2.0 * PI * t / self.wavelength + self.phase).sin();
                (
                    self.anchor.0 + t * dir_r + s * nrm_r,
                    self.anchor.1 + t * dir_c + s * nrm_c,
                )
            })
            .collect()
    }
}

/// In-bounds pixels whose centers `(row + 0.5, col + 0.5)` lie within
/// `width / 2` of a centerline sample, in row-major order.
pub fn rasterize_channel(spec: &ChannelSpec, height: usize, width: usize) -> Vec<(usize, usize)> {
    let mut hit = vec![false; height * width];
    let half = 0.5 * spec.width;
    let r2 = half * half;
    let (h, w) = (height as f64, width as f64);
    for (pr, pc) in spec.centerline(height, width) {
        if pr < -half - 1.0 || pc < -half - 1.0 || pr > h + half + 1.0 || pc > w + half + 1.0 {
            continue;
        }
        let r_lo = (pr - 0.5 - half).floor().max(0.0) as usize;
        let r_hi = ((pr - 0.5 + half).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        let c_lo = (pc - 0.5 - half).floor().max(0.0) as usize;
        let c_hi = ((pc - 0.5 + half).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        for r in r_lo..=r_hi {
            let dr = r as f64 + 0.5 - pr;
            for c in c_lo..=c_hi {
                let dc = c as f64 + 0.5 - pc;
                if dr * dr + dc * dc <= r2 {
                    hit[r * width + c] = true;
                }
            }
        }
    }
    hit.iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| (i / width, i % width))
        .collect()
}
