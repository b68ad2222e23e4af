//! Dynamic RGB-D visual odometry with optical-flow-residual segmentation.
//!
//! The pipeline alternates between robust dense camera tracking and a
//! per-cluster dynamic/static labelling driven by the difference between
//! observed optical flow and the flow induced by the camera motion alone.
//! Static geometry is tracked and accumulated; moving clusters are
//! down-weighted out of the pose estimate.

pub mod clustering;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod pipeline;
pub mod segmentation;
pub mod vo;

pub use geometry::{PinholeIntrinsics, Pixel, RigidTransform, Twist};
pub use grid::Grid;
