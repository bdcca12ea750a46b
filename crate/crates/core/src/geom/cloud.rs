use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Squared Euclidean distance, the single distance definition used by all kernels.
#[inline(always)]
pub fn sq_dist(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// A non-empty set of finite 3-D points, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud("point cloud"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f32; 3]> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize) -> [f32; 3] {
        self.points[i]
    }

    /// Rows selected by `idx`, in index order.
    pub fn select(&self, idx: &SampleIndex) -> PointCloud {
        PointCloud {
            points: idx.indices().iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> [f32; 3] {
        let mut acc = [0f64; 3];
        for p in &self.points {
            for a in 0..3 {
                acc[a] += p[a] as f64;
            }
        }
        let n = self.points.len() as f64;
        [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]
    }

    pub fn translated(&self, t: [f32; 3]) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        }
    }
}

/// Unique row indices into a source cloud of known size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleIndex {
    indices: Vec<usize>,
    source_len: usize,
}

impl SampleIndex {
    pub fn new(indices: Vec<usize>, source_len: usize) -> Result<Self> {
        if indices.len() > source_len {
            return Err(Error::TooMany {
                op: "sample index",
                requested: indices.len(),
                available: source_len,
            });
        }
        let mut seen = alloc::vec![false; source_len];
        for &i in &indices {
            if i >= source_len {
                return Err(Error::IndexOutOfRange {
                    op: "sample index",
                    index: i,
                    len: source_len,
                });
            }
            if core::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("sample index {i} repeated")));
            }
        }
        Ok(Self {
            indices,
            source_len,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    /// `self` applied after `outer`: row `i` of the result indexes the source of `outer`.
    pub fn compose(&self, outer: &SampleIndex) -> Result<SampleIndex> {
        if self.source_len != outer.len() {
            return Err(Error::Shape {
                op: "compose",
                detail: format!(
                    "inner index expects {} rows, outer index provides {}",
                    self.source_len,
                    outer.len()
                ),
            });
        }
        Ok(SampleIndex {
            indices: self.indices.iter().map(|&i| outer.indices[i]).collect(),
            source_len: outer.source_len,
        })
    }
}
