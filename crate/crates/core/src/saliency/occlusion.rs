use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Fill;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::types::{ClassLabel, ImageTensor, SaliencyMap, SaliencyMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub fill: Fill,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            patch_size: 11,
            stride: 2,
            fill: Fill::DatasetMean,
        }
    }
}

/// Window placements along one axis: `floor((side - patch) / stride) + 1`.
pub fn window_positions(side: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch > side || stride == 0 {
        return Vec::new();
    }
    (0..=(side - patch) / stride).map(|i| i * stride).collect()
}

/// Score drops for every window position.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionGrid {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub patch_size: usize,
    /// `original - occluded` probability of the explained class, row-major
    /// over `rows × cols`.
    pub deltas: Vec<f64>,
    pub original: f64,
}

pub fn occlusion_deltas(
    classifier: &dyn Classifier,
    image: &ImageTensor,
    class: ClassLabel,
    cfg: &OcclusionConfig,
    fill_values: &[f32],
) -> Result<OcclusionGrid> {
    let p = cfg.patch_size;
    if p == 0 || cfg.stride == 0 || p > image.height().min(image.width()) {
        return Err(Error::invalid(format!(
            "patch size {p} / stride {} do not fit a {}x{} image",
            cfg.stride,
            image.height(),
            image.width()
        )));
    }
    if fill_values.len() != image.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} fill values", image.channels()),
            got: fill_values.len().to_string(),
        });
    }
    let rows = window_positions(image.height(), p, cfg.stride);
    let cols = window_positions(image.width(), p, cfg.stride);
    let original = classifier.predict(image)?.of(class);
    let windows: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&y| cols.iter().map(move |&x| (y, x)))
        .collect();
    let deltas = windows
        .par_iter()
        .map(|&(y0, x0)| {
            let mut occluded = image.clone();
            for (c, &v) in fill_values.iter().enumerate() {
                for y in y0..y0 + p {
                    for x in x0..x0 + p {
                        occluded.set(c, y, x, v);
                    }
                }
            }
            Ok(original - classifier.predict(&occluded)?.of(class))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OcclusionGrid {
        rows,
        cols,
        patch_size: p,
        deltas,
        original,
    })
}

/// Per-pixel mean of the deltas of all windows covering the pixel; pixels
/// outside every window get 0.
pub fn occlusion_map(
    classifier: &dyn Classifier,
    image: &ImageTensor,
    image_id: &str,
    class: ClassLabel,
    cfg: &OcclusionConfig,
    fill_values: &[f32],
) -> Result<SaliencyMap> {
    let grid = occlusion_deltas(classifier, image, class, cfg, fill_values)?;
    let (h, w) = (image.height(), image.width());
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    for (r, &y0) in grid.rows.iter().enumerate() {
        for (c, &x0) in grid.cols.iter().enumerate() {
            let d = grid.deltas[r * grid.cols.len() + c];
            for y in y0..y0 + grid.patch_size {
                for x in x0..x0 + grid.patch_size {
                    sum[y * w + x] += d;
                    count[y * w + x] += 1;
                }
            }
        }
    }
    let values = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { (s / n as f64) as f32 })
        .collect();
    SaliencyMap::new(h, w, values, SaliencyMethod::Osm, image_id, class)
}
