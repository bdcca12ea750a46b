use alloc::vec::Vec;

use rand::Rng;

use super::{sq_dist, PointCloud, SampleIndex};
use crate::{Error, Result};

/// Uniform sampling of `m` distinct rows without replacement.
///
/// Partial Fisher–Yates: O(P) to initialize, O(1) per drawn sample and
/// independent of the geometry.
pub fn random_sample<R: Rng + ?Sized>(pc: &PointCloud, m: usize, rng: &mut R) -> Result<SampleIndex> {
    random_indices(pc.len(), m, rng)
}

pub(crate) fn random_indices<R: Rng + ?Sized>(
    p: usize,
    m: usize,
    rng: &mut R,
) -> Result<SampleIndex> {
    if m > p {
        return Err(Error::TooMany {
            op: "random_sample",
            requested: m,
            available: p,
        });
    }
    if m == 0 {
        return Err(Error::Invalid("random_sample of zero points".into()));
    }
    let mut idx: Vec<usize> = (0..p).collect();
    for i in 0..m {
        let j = rng.random_range(i..p);
        idx.swap(i, j);
    }
    idx.truncate(m);
    SampleIndex::new(idx, p)
}

/// Greedy max-min farthest-point sampling starting at `start`.
///
/// Each step picks the unselected point whose squared distance to the
/// selected set is largest, lowest index on ties. O(P·m).
pub fn farthest_point_sample(pc: &PointCloud, m: usize, start: usize) -> Result<SampleIndex> {
    let p = pc.len();
    if m > p {
        return Err(Error::TooMany {
            op: "farthest_point_sample",
            requested: m,
            available: p,
        });
    }
    if start >= p {
        return Err(Error::IndexOutOfRange {
            op: "farthest_point_sample",
            index: start,
            len: p,
        });
    }
    if m == 0 {
        return Err(Error::Invalid("farthest_point_sample of zero points".into()));
    }
    let pts = pc.points();
    // Selected points are marked with -1 so they never win again.
    let mut best = alloc::vec![f32::INFINITY; p];
    let mut out = Vec::with_capacity(m);
    let mut cur = start;
    for _ in 0..m {
        out.push(cur);
        best[cur] = -1.0;
        let c = pts[cur];
        let mut arg = usize::MAX;
        let mut far = f32::NEG_INFINITY;
        for (i, (b, q)) in best.iter_mut().zip(pts).enumerate() {
            if *b < 0.0 {
                continue;
            }
            let d = sq_dist(q, &c);
            if d < *b {
                *b = d;
            }
            if *b > far {
                far = *b;
                arg = i;
            }
        }
        cur = arg;
    }
    SampleIndex::new(out, p)
}
