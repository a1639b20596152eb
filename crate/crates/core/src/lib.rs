//! Cross-frame person re-identification for overhead fisheye cameras.
//!
//! Detections seen by two cameras in the same frame are associated by fusing
//! per-feature match probabilities (deep embeddings, hue histograms and
//! floor-plane location) and solving a one-to-one matching.

pub mod appearance;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod report;
pub mod simulator;
pub mod types;

pub use error::{ReidError, Result};
pub use fusion::{fuse, normalize, MatchProbabilityMatrix, Orientation, Temperature};
pub use matching::{greedy_match, hungarian_match, match_pair, Matcher, Matching};
pub use pipeline::PipelineConfig;
pub use types::{BoundingBox, CameraId, Detection, Feature, Identity, Polarity, ScoreMatrix, SyncFramePair};
