use crate::domain::MeasurementSet;
use crate::Result;

/// Radius schedule by measurement count: sparse data gets wide support.
pub fn auto_radius(m: usize) -> usize {
    match m {
        0..=10 => 10,
        11..=20 => 7,
        21..=50 => 5,
        _ => 1,
    }
}

/// Weight of a pixel at squared offset `d2` from its measurement.
pub fn offset_weight(d2: usize) -> f64 {
    1.0 / ((d2 + 1) as f64).sqrt()
}

/// Distance-weighted mask around point measurements.
///
/// Each measurement spreads weight `1/√(δi² + δj² + 1)` over the disc
/// `δi² + δj² ≤ radius²`. Where discs overlap the nearest measurement wins,
/// and among equally near ones the first listed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedMask {
    height: usize,
    width: usize,
    radius: usize,
    weights: Vec<f64>,
    targets: Vec<f64>,
    source: Vec<Option<usize>>,
}

impl ExpandedMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Per-pixel weights in `[0, 1]`, row-major.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-pixel targets `±1` where the weight is positive, else 0.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Index of the measurement that set each pixel.
    pub fn source(&self) -> &[Option<usize>] {
        &self.source
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }

    pub fn target(&self, row: usize, col: usize) -> f64 {
        self.targets[row * self.width + col]
    }

    /// Pixels with positive weight.
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

pub fn expand_mask(
    measurements: &MeasurementSet,
    radius: usize,
    grid: (usize, usize),
) -> Result<ExpandedMask> {
    let (h, w) = grid;
    measurements.check_bounds(h, w)?;
    let mut best = vec![usize::MAX; h * w];
    let mut source = vec![None; h * w];
    let r = radius as isize;
    let r2 = radius * radius;
    for (k, m) in measurements.iter().enumerate() {
        for di in -r..=r {
            for dj in -r..=r {
                let d2 = (di * di + dj * dj) as usize;
                if d2 > r2 {
                    continue;
                }
                let (i, j) = (m.row as isize + di, m.col as isize + dj);
                if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                    continue;
                }
                let p = i as usize * w + j as usize;
                // Strict comparison keeps the earlier measurement on ties.
                if d2 < best[p] {
                    best[p] = d2;
                    source[p] = Some(k);
                }
            }
        }
    }
    let items = measurements.as_slice();
    let weights = best
        .iter()
        .map(|&d2| {
            if d2 == usize::MAX {
                0.0
            } else {
                offset_weight(d2)
            }
        })
        .collect();
    let targets = source
        .iter()
        .map(|s| match s {
            Some(k) => {
                if items[*k].rock == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            None => 0.0,
        })
        .collect();
    Ok(ExpandedMask {
        height: h,
        width: w,
        radius,
        weights,
        targets,
        source,
    })
}

/// `Σ M̃·|g − ỹ|` over all pixels of one image.
pub fn context_loss(image: &[f32], mask: &ExpandedMask) -> f64 {
    image
        .iter()
        .zip(mask.weights())
        .zip(mask.targets())
        .map(|((&g, &w), &y)| {
            if w > 0.0 {
                w * (g as f64 - y).abs()
            } else {
                0.0
            }
        })
        .sum()
}
