//! Bottom-up multi-animal pose post-processing and tracking.
//!
//! The crate covers the whole path from keypoint probability maps to
//! temporally consistent skeleton tracks:
//!
//! - [`skeleton`]: hierarchical skeleton definition, validity and skeleton scale.
//! - [`map_codec`]: ground-truth map encoding and candidate-keypoint decoding.
//! - [`assignment`]: Hungarian and greedy assignment with gating.
//! - [`assembly`]: greedy, order-by-order skeleton assembly.
//! - [`kalman`]: linear Kalman filter with masking and sign-mitigated adaptation.
//! - [`tracker`]: the KeySORT multi-animal skeleton tracker.
//! - [`metrics`]: precision/recall, recovery rate, relative error, frame differences.
//! - [`synth`]: deterministic synthetic scenes used as test oracles.
//! - [`io`]: on-disk formats shared with the command-line tool.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod assignment;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod map_codec;
pub mod metrics;
pub mod skeleton;
pub mod synth;
pub mod tracker;

pub use assembly::{assemble, PartialSkeleton};
pub use assignment::{greedy_assign, hungarian, CostMatrix};
pub use error::{Error, Result};
pub use geometry::Point;
pub use kalman::{FilterModel, FilterState, Mitigation, ObservationMask};
pub use map_codec::{CandidateKeypoint, DecodeParams, EncoderParams, MapStack};
pub use metrics::{EvalReport, PRReport};
pub use skeleton::{ConnectionId, Pose, SkeletonConfig, SkeletonSpec};
pub use tracker::{FrameOutput, TrackRecord, Tracker, TrackerConfig};
