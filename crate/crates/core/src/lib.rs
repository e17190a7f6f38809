//! Scene-graph generation with stacked hybrid-attention encoders and group
//! collaborative learning for long-tailed predicate classification.

pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod gcl;
pub mod grouping;
pub mod numcore;
pub mod metrics;
pub mod pipeline;
pub mod sampler;
pub mod sha;
pub mod train;

pub use error::{Error, Result};
