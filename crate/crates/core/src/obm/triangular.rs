use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Triangular distribution on `[min, max]` peaking at `mode`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangularDist {
    pub min: f64,
    pub mode: f64,
    pub max: f64,
}

impl TriangularDist {
    pub fn new(min: f64, mode: f64, max: f64) -> Result<Self> {
        let d = Self { min, mode, max };
        d.validate()?;
        Ok(d)
    }

    /// Symmetric distribution with the mode at the midpoint.
    pub fn symmetric(min: f64, max: f64) -> Result<Self> {
        Self::new(min, 0.5 * (min + max), max)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.min.is_finite() && self.mode.is_finite() && self.max.is_finite();
        if !finite || !(self.min <= self.mode && self.mode <= self.max) {
            return Err(Error::invalid(format!(
                "triangular distribution needs min <= mode <= max, got ({}, {}, {})",
                self.min, self.mode, self.max
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        (self.min + self.mode + self.max) / 3.0
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, c, b) = (self.min, self.mode, self.max);
        if x <= a {
            0.0
        } else if x >= b {
            1.0
        } else if x <= c {
            (x - a) * (x - a) / ((b - a) * (c - a))
        } else {
            1.0 - (b - x) * (b - x) / ((b - a) * (b - c))
        }
    }
}

/// Inverse-CDF transform of a uniform `u ∈ [0, 1]`.
pub fn sample_triangular(dist: &TriangularDist, u: f64) -> f64 {
    let (a, c, b) = (dist.min, dist.mode, dist.max);
    let span = b - a;
    if span <= 0.0 {
        return a;
    }
    let u = u.clamp(0.0, 1.0);
    let x = if u <= (c - a) / span {
        a + (u * span * (c - a)).sqrt()
    } else {
        b - ((1.0 - u) * span * (b - c)).sqrt()
    };
    x.clamp(a, b)
}
