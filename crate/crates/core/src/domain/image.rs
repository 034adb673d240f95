use crate::{Error, Result};

/// Row-major raster of facies labels in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{}x{} image needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "label {} at index {} is not 0 or 1",
                data[pos], pos
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Sets a pixel to channel rock. Returns `true` if it was background.
    pub fn mark(&mut self, row: usize, col: usize) -> bool {
        let px = &mut self.data[row * self.width + col];
        let fresh = *px == 0;
        *px = 1;
        fresh
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Swaps channel and background labels.
    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

/// Row-major raster of reals in `[-1, 1]`, the generator's output range.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RealImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{}x{} image needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "value {} at index {} is outside [-1, 1]",
                data[pos], pos
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from arbitrary reals, clamping into `[-1, 1]`.
    /// NaN is mapped to `-1`.
    pub fn from_clamped(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        let data = values
            .iter()
            .map(|&v| if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) })
            .collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

pub fn encode_for_network(img: &BinaryImage) -> RealImage {
    RealImage {
        height: img.height,
        width: img.width,
        data: img
            .data
            .iter()
            .map(|&v| if v == 1 { 1.0 } else { -1.0 })
            .collect(),
    }
}

/// `v >= 0 ↦ 1`, `v < 0 ↦ 0`.
pub fn threshold(img: &RealImage) -> BinaryImage {
    BinaryImage {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| u8::from(v >= 0.0)).collect(),
    }
}
