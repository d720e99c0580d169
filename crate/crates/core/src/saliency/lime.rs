use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::segment::{segment_grid, SegmentGrid};
use super::Fill;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::seed::{derive_seed, rng};
use crate::types::{ClassLabel, ImageTensor, SaliencyMap, SaliencyMethod};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LimeKernel {
    /// `exp(-d^2 / width^2)` on the cosine distance to the unperturbed mask.
    Exponential { width: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSampling {
    Random,
    /// All `2^S` masks; only for small segment counts.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub cell_size: usize,
    pub sample_count: usize,
    /// Chance that a segment stays visible in a random mask.
    pub mask_probability: f64,
    pub kernel: LimeKernel,
    pub sampling: MaskSampling,
    pub fill: Fill,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            cell_size: 32,
            sample_count: 1000,
            mask_probability: 0.5,
            kernel: LimeKernel::Exponential { width: 0.25 },
            sampling: MaskSampling::Random,
            fill: Fill::DatasetMean,
            seed: 0,
        }
    }
}

/// Fitted linear surrogate: `score ≈ intercept + Σ coefficients[s] · z_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub segments: SegmentGrid,
}

const MAX_EXHAUSTIVE_SEGMENTS: usize = 16;

/// Binary masks over `n` segments. Random sampling always includes the
/// all-visible mask first.
pub fn sample_masks(n: usize, cfg: &LimeConfig, seed: u64) -> Result<Vec<Vec<bool>>> {
    match cfg.sampling {
        MaskSampling::Exhaustive => {
            if n > MAX_EXHAUSTIVE_SEGMENTS {
                return Err(Error::invalid(format!(
                    "exhaustive sampling over {n} segments (max {MAX_EXHAUSTIVE_SEGMENTS})"
                )));
            }
            Ok((0..1usize << n)
                .map(|bits| (0..n).map(|s| bits >> s & 1 == 1).collect())
                .collect())
        }
        MaskSampling::Random => {
            if cfg.sample_count <= n {
                return Err(Error::invalid(format!(
                    "LIME needs more samples ({}) than segments ({n})",
                    cfg.sample_count
                )));
            }
            if !(cfg.mask_probability > 0.0 && cfg.mask_probability < 1.0) {
                return Err(Error::invalid("mask_probability must lie in (0, 1)"));
            }
            let mut r = rng(seed);
            let mut masks = vec![vec![true; n]];
            for _ in 1..cfg.sample_count {
                masks.push((0..n).map(|_| r.random::<f64>() < cfg.mask_probability).collect());
            }
            Ok(masks)
        }
    }
}

pub fn kernel_weight(kernel: LimeKernel, mask: &[bool]) -> f64 {
    match kernel {
        LimeKernel::Uniform => 1.0,
        LimeKernel::Exponential { width } => {
            let on = mask.iter().filter(|&&z| z).count() as f64;
            // cosine similarity between z and the all-ones vector
            let d = if on == 0.0 { 1.0 } else { 1.0 - (on / mask.len() as f64).sqrt() };
            (-d * d / (width * width)).exp()
        }
    }
}

/// Weighted least squares with an intercept column, solved through the
/// normal equations.
pub fn weighted_least_squares(masks: &[Vec<bool>], targets: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = masks.first().map_or(0, Vec::len);
    let dim = n + 1;
    if masks.len() < dim {
        return Err(Error::SurrogateDegenerate(format!(
            "{} samples for {dim} unknowns",
            masks.len()
        )));
    }
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut row = vec![0.0; dim];
    for ((z, &y), &w) in masks.iter().zip(targets).zip(weights) {
        row[0] = 1.0;
        for (r, &b) in row[1..].iter_mut().zip(z) {
            *r = f64::from(u8::from(b));
        }
        for i in 0..dim {
            if row[i] == 0.0 {
                continue;
            }
            rhs[i] += w * row[i] * y;
            for j in 0..dim {
                gram[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let scale = (0..dim).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SurrogateDegenerate("design matrix is not positive definite".into()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v));
    if !(min_pivot > 1e-10 * scale) {
        return Err(Error::SurrogateDegenerate("design matrix is rank deficient".into()));
    }
    let beta = chol.solve(&rhs);
    Ok((beta[0], beta.iter().skip(1).copied().collect()))
}

/// Per-image seed depends only on the configured seed and the pixel content.
pub fn image_seed(seed: u64, image: &ImageTensor) -> u64 {
    let bytes: Vec<u8> = image.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    derive_seed(seed, &bytes)
}

pub fn lime_fit(
    classifier: &dyn Classifier,
    image: &ImageTensor,
    class: ClassLabel,
    cfg: &LimeConfig,
    fill_values: &[f32],
) -> Result<LimeFit> {
    if fill_values.len() != image.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} fill values", image.channels()),
            got: fill_values.len().to_string(),
        });
    }
    if let LimeKernel::Exponential { width } = cfg.kernel {
        if !(width > 0.0) {
            return Err(Error::invalid("LIME kernel width must be positive"));
        }
    }
    let segments = segment_grid(image.height(), image.width(), cfg.cell_size)?;
    let masks = sample_masks(segments.count(), cfg, image_seed(cfg.seed, image))?;
    let targets = masks
        .par_iter()
        .map(|z| Ok(classifier.predict(&perturb(image, &segments, z, fill_values))?.of(class)))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = masks.iter().map(|z| kernel_weight(cfg.kernel, z)).collect();
    let (intercept, coefficients) = weighted_least_squares(&masks, &targets, &weights)?;
    Ok(LimeFit {
        intercept,
        coefficients,
        segments,
    })
}

/// Replace every hidden segment with the fill colour.
pub fn perturb(image: &ImageTensor, segments: &SegmentGrid, mask: &[bool], fill_values: &[f32]) -> ImageTensor {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if !mask[segments.segment_of(y, x)] {
                for (c, &v) in fill_values.iter().enumerate() {
                    out.set(c, y, x, v);
                }
            }
        }
    }
    out
}

/// Each pixel carries its segment's surrogate coefficient.
pub fn lime_map(
    classifier: &dyn Classifier,
    image: &ImageTensor,
    image_id: &str,
    class: ClassLabel,
    cfg: &LimeConfig,
    fill_values: &[f32],
) -> Result<SaliencyMap> {
    let fit = lime_fit(classifier, image, class, cfg, fill_values)?;
    let values = fit.segments.ids.iter().map(|&s| fit.coefficients[s] as f32).collect();
    SaliencyMap::new(image.height(), image.width(), values, SaliencyMethod::Lime, image_id, class)
}
