//! Multi-modal graph recommender for music.
//!
//! Users and songs are embedded per content channel (lyrics, audio
//! spectra, artwork), smoothed over the interaction and friendship
//! graphs, fused into single profiles, and scored with an optional
//! emotion-affinity bonus. Training couples the channels with a
//! mutual-learning objective on top of pairwise ranking loss.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
mod numerics;
pub mod training;

pub use config::TrainConfig;
pub use dataset::{Dataset, FeatureTable, Modality, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{evaluate, random_baseline, MetricsReport};
pub use model::{ForwardState, ModelParams};
pub use training::{fit, FitResult};
