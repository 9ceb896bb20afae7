//! Desk-scale building blocks for topology-aware, keypoint-based object pose
//! estimation on point clouds.
//!
//! The crate is organized around a small dense-tensor engine with
//! reverse-mode differentiation ([`tensor`]), classical geometry and
//! topological-data-analysis kernels ([`geometry`], [`topology`],
//! [`serialization`]), the neural blocks built on top of them
//! ([`keypoints`], [`aggregation`], [`heads`]), pose evaluation metrics
//! ([`metrics`]) and the end-to-end model assembly and micro-scale training
//! loop ([`pipeline`]).
//!
//! Everything is CPU-only, deterministic given explicit seeds, and checked
//! against brute-force oracles in the test suites.

pub mod aggregation;
pub mod geometry;
pub mod nn;
pub mod heads;
pub mod keypoints;
pub mod metrics;
pub mod pipeline;
// pub mod selftest;
pub mod serialization;
pub mod tensor;
pub mod topology;
pub mod weights;

pub use geometry::{PointCloud, Pose, ShapeSpec};
pub use heads::{LossBreakdown, LossWeights, Prediction};
pub use keypoints::KeypointSet;
pub use metrics::{MetricReport, OrientedBox};
pub use pipeline::{ModelConfig, TrainConfig};
pub use tensor::{Graph, GraphBuilder, Real, Tensor};
pub use topology::{PersistenceDiagram, TopoFeature};
