//! Summary statistics over sets of binary images.

use std::fmt::Write as _;

use crate::domain::BinaryImage;
use crate::{Error, Result};

/// Share of pixels equal to 1.
pub fn proportion(img: &BinaryImage) -> f64 {
    img.count_ones() as f64 / (img.height() * img.width()) as f64
}

pub fn mean_proportion(images: &[BinaryImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("no images"));
    }
    Ok(images.iter().map(proportion).sum::<f64>() / images.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanImage {
    pub height: usize,
    pub width: usize,
    /// Per-pixel frequency of 1, row-major.
    pub values: Vec<f64>,
    /// Mean over all pixels of all images.
    pub proportion: f64,
    /// Largest `|value − proportion|` over pixels.
    pub max_deviation: f64,
}

pub fn mean_image(images: &[BinaryImage]) -> Result<MeanImage> {
    let first = images.first().ok_or_else(|| Error::invalid("no images"))?;
    let (h, w) = (first.height(), first.width());
    let mut counts = vec![0usize; h * w];
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::shape(format!(
                "image of {}x{} among {h}x{w} images",
                img.height(),
                img.width()
            )));
        }
        for (c, &v) in counts.iter_mut().zip(img.data()) {
            *c += usize::from(v);
        }
    }
    let n = images.len() as f64;
    let values: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let proportion = counts.iter().sum::<usize>() as f64 / (n * (h * w) as f64);
    let max_deviation = values
        .iter()
        .map(|v| (v - proportion).abs())
        .fold(0.0, f64::max);
    Ok(MeanImage {
        height: h,
        width: w,
        values,
        proportion,
        max_deviation,
    })
}

impl MeanImage {
    /// Gray levels `round(255·value)` for PGM output.
    pub fn gray_levels(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }
}

fn hamming(a: &BinaryImage, b: &BinaryImage) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| x != y)
        .count();
    diff as f64 / a.data().len() as f64
}

/// Mean normalized Hamming distance over unordered pairs.
pub fn diversity(images: &[BinaryImage]) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::invalid("diversity needs at least 2 images"));
    }
    let (h, w) = (images[0].height(), images[0].width());
    if images.iter().any(|i| i.height() != h || i.width() != w) {
        return Err(Error::shape("images differ in size"));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            sum += hamming(&images[i], &images[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// `|mean proportion(dataset) − mean proportion(samples)|`.
pub fn compare_proportions(dataset: &[BinaryImage], samples: &[BinaryImage]) -> Result<f64> {
    Ok((mean_proportion(dataset)? - mean_proportion(samples)?).abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub count: usize,
    pub mean_proportion: f64,
    pub proportion_std: f64,
    pub mean_image: MeanImage,
    /// Present when at least two images were given.
    pub mean_pairwise_hamming: Option<f64>,
    /// Set when a second image set was compared against the first.
    pub compared: Option<Comparison>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub count: usize,
    pub mean_proportion: f64,
    pub proportion_difference: f64,
    pub max_mean_deviation: f64,
}

/// Pairs beyond this many images are subsampled for the diversity figure:
/// only the first `DIVERSITY_LIMIT` images enter it.
pub const DIVERSITY_LIMIT: usize = 500;

impl StatsReport {
    pub fn new(images: &[BinaryImage]) -> Result<Self> {
        let mean_image = mean_image(images)?;
        let props: Vec<f64> = images.iter().map(proportion).collect();
        let mean = props.iter().sum::<f64>() / props.len() as f64;
        let var = props.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / props.len() as f64;
        let head = &images[..images.len().min(DIVERSITY_LIMIT)];
        Ok(Self {
            count: images.len(),
            mean_proportion: mean,
            proportion_std: var.sqrt(),
            mean_image,
            mean_pairwise_hamming: diversity(head).ok(),
            compared: None,
        })
    }

    pub fn compare(mut self, samples: &[BinaryImage]) -> Result<Self> {
        let m = mean_image(samples)?;
        let mean = mean_proportion(samples)?;
        self.compared = Some(Comparison {
            count: samples.len(),
            mean_proportion: mean,
            proportion_difference: (self.mean_proportion - mean).abs(),
            max_mean_deviation: m.max_deviation,
        });
        Ok(self)
    }

    /// Line-oriented `key=value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "height={}", self.mean_image.height);
        let _ = writeln!(s, "width={}", self.mean_image.width);
        let _ = writeln!(s, "mean_proportion={:.6}", self.mean_proportion);
        let _ = writeln!(s, "proportion_std={:.6}", self.proportion_std);
        let _ = writeln!(s, "max_mean_deviation={:.6}", self.mean_image.max_deviation);
        if let Some(h) = self.mean_pairwise_hamming {
            let _ = writeln!(s, "mean_pairwise_hamming={h:.6}");
        }
        if let Some(c) = &self.compared {
            let _ = writeln!(s, "samples_count={}", c.count);
            let _ = writeln!(s, "samples_mean_proportion={:.6}", c.mean_proportion);
            let _ = writeln!(s, "proportion_difference={:.6}", c.proportion_difference);
            let _ = writeln!(s, "samples_max_mean_deviation={:.6}", c.max_mean_deviation);
        }
        s
    }
}
