//! Dataset loading, augmentation, and synthetic planted-error data.

mod augment;
mod imageio;
mod manifest;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, ImageTensor};

pub use augment::{augment, AugmentationPolicy, AugmentedSample, Transform};
pub use imageio::{decode_image, write_png};
pub use manifest::{load_dataset, DatasetManifest, ManifestEntry, DEFAULT_SIDE};
pub use synth::{synth_generate, PlantedSignature, SynthMeta, SyntheticDataset, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// A labeled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Per-channel mean intensity over all images of a split.
    pub fn channel_means(&self, split: Split) -> Option<Vec<f32>> {
        let samples = self.split(split);
        let first = samples.first()?;
        let mut acc = vec![0.0f64; first.image.channels()];
        for s in samples {
            for (a, m) in acc.iter_mut().zip(s.image.channel_means()) {
                *a += m as f64;
            }
        }
        Some(acc.iter().map(|a| (a / samples.len() as f64) as f32).collect())
    }
}
