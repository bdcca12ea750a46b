//! Point-cloud kernels: random sampling, farthest-point sampling and exact
//! k-nearest-neighbor search.
//!
//! All kernels are pure. Distances are squared Euclidean in `f32`, evaluated
//! by [`sq_dist`] everywhere so that every search path produces bit-identical
//! results; equal distances are ordered by the lower target index.

mod cloud;
mod knn;
mod sampling;

pub use cloud::{sq_dist, PointCloud, SampleIndex};
pub use knn::{knn, knn_accel, knn_brute, GridIndex, NeighborTable};
pub use sampling::{farthest_point_sample, random_sample};
pub(crate) use sampling::random_indices;
