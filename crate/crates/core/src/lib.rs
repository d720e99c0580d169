//! Post-hoc reliability scoring for binary image classifiers.
//!
//! The pipeline classifies images, explains each prediction with a saliency
//! map, clusters the validation maps, scores every cluster by its fraction of
//! false predictions, and uses those scores to annotate and adjust
//! predictions on unseen data.

pub mod embed;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reliability;
pub mod saliency;
pub mod seed;
pub mod types;

pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, ConfusionOutcome};
pub use types::{ClassLabel, ClassScores, ImageTensor, PredictionRecord, SaliencyMap, SaliencyMethod};
