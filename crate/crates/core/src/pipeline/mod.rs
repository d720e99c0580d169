//! Stage orchestration over a fixed output layout.

mod config;
mod stages;

pub use config::{DatasetConfig, DatasetSource, ModelConfig, Overrides, PipelineConfig, ReliabilityConfig};
pub use stages::{read_assignments, render_summary, Layout, Run, SplitSummary, Summary};
