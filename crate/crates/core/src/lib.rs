//! Hierarchy-dependent cross-platform multi-view feature learning for venue
//! category prediction.
//!
//! The pipeline selects key frames by color-histogram change, mean-pools
//! per-frame object and scene descriptors into video-level vectors, and trains
//! a fusion network whose softmax-head weights are tied to a venue taxonomy
//! through a Gaussian parent-child prior. Target-platform images are filtered
//! by the source model's per-category ranking before a second training phase.

pub mod cli;
pub mod cptdl;
pub mod error;
pub mod experiment;
pub mod features;
pub mod hier_prior;
pub mod hierarchy;
pub mod keyframes;
pub mod metrics;
pub mod network;
pub mod synth;

pub use error::{Error, Result};
pub use features::{Dataset, InputView, MultiViewSample, Platform, View};
pub use hier_prior::{HeadState, HierClassifier, HierPriorConfig, TrainConfig};
pub use hierarchy::{NodeId, VenueHierarchy};
pub use network::{FusionNetwork, NetworkShape};
