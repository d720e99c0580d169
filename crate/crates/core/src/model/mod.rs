//! Classifier contract and the bundled MiniCnn.

mod adam;
mod checkpoint;
mod cnn;
mod tensor;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassLabel, ClassScores, ImageTensor};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cnn::{ActivationPattern, Architecture, BlockTrace, Forward, ForwardTrace, MiniCnn};
pub use tensor::Tensor3;
pub use train::{evaluate, resume, train, BestModel, EpochMetrics, TrainConfig, TrainOutcome, TrainState};

/// Index of a convolutional block; displayed as `conv1`, `conv2`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId(pub usize);

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conv{}", self.0 + 1)
    }
}

impl FromStr for LayerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix("conv")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(|n| LayerId(n - 1))
            .ok_or_else(|| Error::UnknownLayer(s.to_string()))
    }
}

/// Feature maps of one conv layer for a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    pub layer: LayerId,
    pub tensor: Tensor3,
}

/// Gradient of a class score w.r.t. an [`ActivationStack`]; same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack {
    pub layer: LayerId,
    pub tensor: Tensor3,
}

/// Anything that scores images. Gradient access is optional; classifiers
/// without it still serve the perturbation-based explainers.
pub trait Classifier: Sync {
    fn predict(&self, image: &ImageTensor) -> Result<ClassScores>;

    /// `layer = None` selects the classifier's default (last conv) layer.
    fn activations_and_gradients(
        &self,
        _image: &ImageTensor,
        _class: ClassLabel,
        _layer: Option<LayerId>,
    ) -> Result<(ActivationStack, GradientStack)> {
        Err(Error::UnsupportedExplainer)
    }

    fn supports_gradients(&self) -> bool {
        false
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn predict(&self, image: &ImageTensor) -> Result<ClassScores> {
        (**self).predict(image)
    }

    fn activations_and_gradients(
        &self,
        image: &ImageTensor,
        class: ClassLabel,
        layer: Option<LayerId>,
    ) -> Result<(ActivationStack, GradientStack)> {
        (**self).activations_and_gradients(image, class, layer)
    }

    fn supports_gradients(&self) -> bool {
        (**self).supports_gradients()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_names_round_trip() {
        assert_eq!("conv3".parse::<LayerId>().unwrap(), LayerId(2));
        assert_eq!(LayerId(0).to_string(), "conv1");
        assert!("conv0".parse::<LayerId>().is_err());
        assert!("dense".parse::<LayerId>().is_err());
    }
}
