//! Domain value types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{outcome_of, ConfusionOutcome};

/// Harvest-readiness class. `Ready` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    NotReady = 0,
    Ready = 1,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::NotReady, ClassLabel::Ready];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(ClassLabel::NotReady),
            1 => Ok(ClassLabel::Ready),
            other => Err(Error::invalid(format!("class index {other} out of range"))),
        }
    }

    pub fn flip(self) -> Self {
        match self {
            ClassLabel::NotReady => ClassLabel::Ready,
            ClassLabel::Ready => ClassLabel::NotReady,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::NotReady => "not_ready",
            ClassLabel::Ready => "ready",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ready" => Ok(ClassLabel::Ready),
            "not_ready" => Ok(ClassLabel::NotReady),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Planar `channels × height × width` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", height * width * channels),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// Set one value, clamping into `[0, 1]`.
    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: f32) {
        self.data[(channel * self.height + y) * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn channel_means(&self) -> Vec<f32> {
        (0..self.channels)
            .map(|c| {
                let plane = self.plane(c);
                (plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64) as f32
            })
            .collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        self.remap(self.height, self.width, |y, x| (y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        self.remap(self.height, self.width, |y, x| (self.height - 1 - y, x))
    }

    /// Rotate 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        // output (y, x) takes input (h - 1 - x, y)
        self.remap(self.width, self.height, |y, x| (self.height - 1 - x, y))
    }

    fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    let (sy, sx) = src(y, x);
                    data.push(self.get(c, sy, sx));
                }
            }
        }
        Self {
            height,
            width,
            channels: self.channels,
            data,
        }
    }
}

/// Softmax output of a binary classifier, indexed by [`ClassLabel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    probabilities: [f64; 2],
}

impl ClassScores {
    pub fn new(probabilities: [f64; 2]) -> Result<Self> {
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid(format!(
                "class probabilities {probabilities:?} outside [0, 1]"
            )));
        }
        let sum = probabilities[0] + probabilities[1];
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("class probabilities sum to {sum}")));
        }
        Ok(Self { probabilities })
    }

    /// Numerically stable softmax over two logits.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let m = logits[0].max(logits[1]);
        let e0 = (logits[0] - m).exp();
        let e1 = (logits[1] - m).exp();
        let s = e0 + e1;
        Self {
            probabilities: [e0 / s, e1 / s],
        }
    }

    pub fn probabilities(&self) -> [f64; 2] {
        self.probabilities
    }

    pub fn of(&self, class: ClassLabel) -> f64 {
        self.probabilities[class.index()]
    }

    /// Most probable class; exact ties resolve to `NotReady`.
    pub fn argmax(&self) -> ClassLabel {
        if self.probabilities[1] > self.probabilities[0] {
            ClassLabel::Ready
        } else {
            ClassLabel::NotReady
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyMethod {
    GradCam,
    Osm,
    Lime,
}

impl SaliencyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SaliencyMethod::GradCam => "gradcam",
            SaliencyMethod::Osm => "osm",
            SaliencyMethod::Lime => "lime",
        }
    }
}

impl fmt::Display for SaliencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SaliencyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcam" => Ok(SaliencyMethod::GradCam),
            "osm" => Ok(SaliencyMethod::Osm),
            "lime" => Ok(SaliencyMethod::Lime),
            other => Err(Error::invalid(format!("unknown saliency method `{other}`"))),
        }
    }
}

/// Per-pixel relevance field for one (image, method, class) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values.
    pub values: Vec<f32>,
    pub method: SaliencyMethod,
    pub image_id: String,
    pub explained_class: ClassLabel,
}

impl SaliencyMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        method: SaliencyMethod,
        image_id: impl Into<String>,
        explained_class: ClassLabel,
    ) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{height}x{width} map"),
                got: format!("{} values", values.len()),
            });
        }
        Ok(Self {
            height,
            width,
            values,
            method,
            image_id: image_id.into(),
            explained_class,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// One classified image plus everything later stages attach to it.
///
/// `outcome` is present exactly when `truth` is, and `unreliability` exactly
/// when `cluster_id` is; the constructors and mutators keep both pairs in sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub predicted: ClassLabel,
    pub scores: ClassScores,
    pub truth: Option<ClassLabel>,
    pub outcome: Option<ConfusionOutcome>,
    pub cluster_id: Option<usize>,
    pub unreliability: Option<f64>,
    /// Set when the prediction was flipped by the adjustment step.
    #[serde(default)]
    pub swapped: bool,
}

impl PredictionRecord {
    /// Record whose predicted class is the argmax of `scores`.
    pub fn new(image_id: impl Into<String>, scores: ClassScores, truth: Option<ClassLabel>) -> Self {
        let predicted = scores.argmax();
        Self {
            image_id: image_id.into(),
            predicted,
            scores,
            truth,
            outcome: truth.map(|t| outcome_of(predicted, t)),
            cluster_id: None,
            unreliability: None,
            swapped: false,
        }
    }

    pub fn set_predicted(&mut self, predicted: ClassLabel) {
        self.predicted = predicted;
        self.outcome = self.truth.map(|t| outcome_of(predicted, t));
    }

    pub fn set_cluster(&mut self, cluster_id: usize, unreliability: f64) {
        self.cluster_id = Some(cluster_id);
        self.unreliability = Some(unreliability);
    }

    /// `1 - unreliability`, when the record has been annotated.
    pub fn reliability(&self) -> Option<f64> {
        self.unreliability.map(|r| 1.0 - r)
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.truth.map(|t| t == self.predicted)
    }
}
