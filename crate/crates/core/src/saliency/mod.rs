//! Grad-CAM, occlusion sensitivity and LIME over any [`Classifier`].

mod gradcam;
mod io;
mod lime;
mod occlusion;
mod segment;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Sample;
use crate::model::Classifier;
use crate::seed::sha256_hex;
use crate::types::{ClassLabel, ClassScores, ImageTensor, SaliencyMap, SaliencyMethod};

pub use gradcam::{bilinear_resize, grad_cam, GradCamConfig};
pub use io::{map_paths, read_map, write_map, MapSidecar};
pub use lime::{
    image_seed, kernel_weight, lime_fit, lime_map, perturb, sample_masks, weighted_least_squares, LimeConfig,
    LimeFit, LimeKernel, MaskSampling,
};
pub use occlusion::{occlusion_deltas, occlusion_map, window_positions, OcclusionConfig, OcclusionGrid};
pub use segment::{segment_grid, SegmentGrid};

/// Replacement colour for occluded or hidden pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    DatasetMean,
    Zero,
    Gray,
}

impl Fill {
    /// Per-channel fill values. `DatasetMean` falls back to the image's own
    /// channel means when no dataset mean is supplied.
    pub fn values(self, dataset_mean: Option<&[f32]>, image: &ImageTensor) -> Result<Vec<f32>> {
        let c = image.channels();
        let v = match self {
            Fill::Zero => vec![0.0; c],
            Fill::Gray => vec![0.5; c],
            Fill::DatasetMean => match dataset_mean {
                Some(m) if m.len() == c => m.to_vec(),
                Some(m) => {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{c} channel means"),
                        got: m.len().to_string(),
                    })
                }
                None => image.channel_means(),
            },
        };
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub method: SaliencyMethod,
    pub gradcam: GradCamConfig,
    pub osm: OcclusionConfig,
    pub lime: LimeConfig,
    /// Per-channel means of the training split, used by `Fill::DatasetMean`.
    pub dataset_mean: Option<Vec<f32>>,
    /// Class to explain; `None` explains each image's predicted class.
    pub class: Option<ClassLabel>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            method: SaliencyMethod::GradCam,
            gradcam: GradCamConfig::default(),
            osm: OcclusionConfig::default(),
            lime: LimeConfig::default(),
            dataset_mean: None,
            class: None,
        }
    }
}

impl ExplainConfig {
    /// JSON of the settings that influence the active method's maps.
    pub fn method_config(&self) -> serde_json::Value {
        let inner = match self.method {
            SaliencyMethod::GradCam => serde_json::to_value(&self.gradcam),
            SaliencyMethod::Osm => serde_json::to_value(&self.osm),
            SaliencyMethod::Lime => serde_json::to_value(&self.lime),
        }
        .expect("config serializes");
        let uses_fill = self.method != SaliencyMethod::GradCam;
        serde_json::json!({
            "method": self.method,
            "params": inner,
            "dataset_mean": if uses_fill { serde_json::to_value(&self.dataset_mean).unwrap() } else { serde_json::Value::Null },
            "class": self.class,
        })
    }

    pub fn digest(&self) -> String {
        format!("sha256:{}", sha256_hex(self.method_config().to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub map: SaliencyMap,
    pub scores: ClassScores,
}

impl Explanation {
    pub fn score_of_explained_class(&self) -> f64 {
        self.scores.of(self.map.explained_class)
    }
}

pub fn explain(classifier: &dyn Classifier, image: &ImageTensor, image_id: &str, cfg: &ExplainConfig) -> Result<Explanation> {
    let scores = classifier.predict(image)?;
    let class = cfg.class.unwrap_or_else(|| scores.argmax());
    let mean = cfg.dataset_mean.as_deref();
    let map = match cfg.method {
        SaliencyMethod::GradCam => grad_cam(classifier, image, image_id, class, &cfg.gradcam)?,
        SaliencyMethod::Osm => {
            let fill = cfg.osm.fill.values(mean, image)?;
            occlusion_map(classifier, image, image_id, class, &cfg.osm, &fill)?
        }
        SaliencyMethod::Lime => {
            let fill = cfg.lime.fill.values(mean, image)?;
            lime_map(classifier, image, image_id, class, &cfg.lime, &fill)?
        }
    };
    Ok(Explanation { map, scores })
}

/// One explanation per sample, in input order.
pub fn batch_explain(classifier: &dyn Classifier, samples: &[Sample], cfg: &ExplainConfig) -> Result<Vec<Explanation>> {
    samples
        .par_iter()
        .map(|s| explain(classifier, &s.image, &s.id, cfg).map_err(|e| e.context(format!("image {}", s.id))))
        .collect()
}

#[cfg(test)]
mod tests;
