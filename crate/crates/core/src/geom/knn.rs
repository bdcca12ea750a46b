use alloc::vec;
use alloc::vec::Vec;

use super::{sq_dist, PointCloud};
use crate::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// For each query, the `k` nearest targets ascending by squared distance,
/// equal distances ordered by lower target index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    dists: Vec<f32>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    /// Flat row-major `[queries, k]` target indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Flat row-major `[queries, k]` squared distances.
    pub fn dists(&self) -> &[f32] {
        &self.dists
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn row_dists(&self, q: usize) -> &[f32] {
        &self.dists[q * self.k..(q + 1) * self.k]
    }

    /// Bitwise equality, including distances.
    pub fn bit_eq(&self, other: &NeighborTable) -> bool {
        self.k == other.k
            && self.indices == other.indices
            && self.dists.len() == other.dists.len()
            && self
                .dists
                .iter()
                .zip(&other.dists)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Bounded sorted candidate list ordered by `(distance, index)`.
struct Best {
    k: usize,
    items: Vec<(f32, usize)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn clear(&mut self) {
        self.items.clear();
    }

    fn full(&self) -> bool {
        self.items.len() == self.k
    }

    fn worst(&self) -> f32 {
        self.items.last().map_or(f32::INFINITY, |c| c.0)
    }

    #[inline]
    fn offer(&mut self, d: f32, i: usize) {
        if self.full() {
            let &(wd, wi) = self.items.last().unwrap();
            if d > wd || (d == wd && i > wi) {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(cd, ci)| cd < d || (cd == d && ci < i));
        self.items.insert(pos, (d, i));
        self.items.truncate(self.k);
    }

    fn drain_into(&mut self, idx: &mut Vec<usize>, dist: &mut Vec<f32>) {
        for &(d, i) in &self.items {
            idx.push(i);
            dist.push(d);
        }
        self.clear();
    }
}

fn check_k(k: usize, targets: &PointCloud) -> Result<()> {
    if k > targets.len() {
        return Err(Error::TooMany {
            op: "knn",
            requested: k,
            available: targets.len(),
        });
    }
    Ok(())
}

/// Exhaustive exact KNN, O(Q·T).
pub fn knn_brute(queries: &PointCloud, targets: &PointCloud, k: usize) -> Result<NeighborTable> {
    check_k(k, targets)?;
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut dists = Vec::with_capacity(queries.len() * k);
    let mut best = Best::new(k);
    if k > 0 {
        for q in queries.points() {
            for (i, t) in targets.points().iter().enumerate() {
                let d = sq_dist(q, t);
                // Targets arrive in index order, so equal distances never displace.
                if !best.full() || d < best.worst() {
                    best.offer(d, i);
                }
            }
            best.drain_into(&mut indices, &mut dists);
        }
    }
    Ok(NeighborTable { k, indices, dists })
}

/// Uniform-grid index over a target cloud for exact KNN with expanding shells.
///
/// Cell size targets a mean occupancy of about two points per cell; axes
/// with negligible extent collapse to a single layer of cells.
#[derive(Clone, Debug)]
pub struct GridIndex<'a> {
    targets: &'a PointCloud,
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: points of cell `c` are `order[starts[c]..starts[c + 1]]`.
    starts: Vec<u32>,
    order: Vec<u32>,
}

const OCCUPANCY: f64 = 2.0;

impl<'a> GridIndex<'a> {
    pub fn build(targets: &'a PointCloud) -> Self {
        let pts = targets.points();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pts {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a] as f64);
                hi[a] = hi[a].max(p[a] as f64);
            }
        }
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let diag = (ext[0] * ext[0] + ext[1] * ext[1] + ext[2] * ext[2]).sqrt();
        let target_cells = (pts.len() as f64 / OCCUPANCY).max(1.0);

        let (cell, dims) = if diag == 0.0 || pts.len() < 4 {
            (1.0, [1, 1, 1])
        } else {
            // Fit the cell edge over the axes that actually span several cells.
            let mut cell = (ext.iter().map(|e| e.max(diag * 1e-3)).product::<f64>() / target_cells).cbrt();
            for _ in 0..4 {
                let active: Vec<f64> = ext.iter().copied().filter(|&e| e > cell).collect();
                if active.is_empty() {
                    break;
                }
                let vol: f64 = active.iter().product();
                cell = (vol / target_cells).powf(1.0 / active.len() as f64);
            }
            let cap = 4 * pts.len() + 8;
            let mut dims = [1usize; 3];
            for a in 0..3 {
                dims[a] = ((ext[a] / cell).floor() as usize + 1).clamp(1, cap);
            }
            while dims.iter().product::<usize>() > cap {
                cell *= 1.25;
                for a in 0..3 {
                    dims[a] = ((ext[a] / cell).floor() as usize + 1).clamp(1, cap);
                }
            }
            (cell, dims)
        };

        let mut grid = Self {
            targets,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let ids: Vec<usize> = pts.iter().map(|p| grid.cell_id(grid.cell_of(p))).collect();
        let mut counts = vec![0u32; ncell + 1];
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; pts.len()];
        for (i, &c) in ids.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_of(&self, p: &[f32; 3]) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] as f64 - self.origin[a]) / self.cell).floor();
            c[a] = if f <= 0.0 {
                0
            } else {
                (f as usize).min(self.dims[a] - 1)
            };
        }
        c
    }

    #[inline]
    fn cell_id(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Lower bound on the distance from `q` to any point outside the cell
    /// box `[lo, hi]` (inclusive cell coordinates); `None` if the box covers the grid.
    fn outside_bound(&self, q: &[f32; 3], lo: [usize; 3], hi: [usize; 3]) -> Option<f64> {
        let mut bound: Option<f64> = None;
        for a in 0..3 {
            let qa = q[a] as f64;
            if lo[a] > 0 {
                let plane = self.origin[a] + lo[a] as f64 * self.cell;
                let gap = (qa - plane).max(0.0);
                bound = Some(bound.map_or(gap, |b| b.min(gap)));
            }
            if hi[a] + 1 < self.dims[a] {
                let plane = self.origin[a] + (hi[a] + 1) as f64 * self.cell;
                let gap = (plane - qa).max(0.0);
                bound = Some(bound.map_or(gap, |b| b.min(gap)));
            }
        }
        bound
    }

    fn search(&self, q: &[f32; 3], best: &mut Best) {
        let pts = self.targets.points();
        let c = self.cell_of(q);
        let mut r = 0usize;
        loop {
            let lo = [c[0].saturating_sub(r), c[1].saturating_sub(r), c[2].saturating_sub(r)];
            let hi = [
                (c[0] + r).min(self.dims[0] - 1),
                (c[1] + r).min(self.dims[1] - 1),
                (c[2] + r).min(self.dims[2] - 1),
            ];
            for z in lo[2]..=hi[2] {
                let on_z = z.abs_diff(c[2]) == r;
                for y in lo[1]..=hi[1] {
                    let on_zy = on_z || y.abs_diff(c[1]) == r;
                    for x in lo[0]..=hi[0] {
                        if !on_zy && x.abs_diff(c[0]) != r {
                            continue;
                        }
                        let id = self.cell_id([x, y, z]);
                        let span = self.starts[id] as usize..self.starts[id + 1] as usize;
                        for &i in &self.order[span] {
                            let i = i as usize;
                            let d = sq_dist(q, &pts[i]);
                            best.offer(d, i);
                        }
                    }
                }
            }
            match self.outside_bound(q, lo, hi) {
                None => return,
                Some(b) => {
                    // Margin absorbs f32 rounding in the candidate distances.
                    if best.full() && b * b * (1.0 - 1e-5) > best.worst() as f64 {
                        return;
                    }
                }
            }
            r += 1;
        }
    }

    /// Exact KNN for `queries` against the indexed targets.
    pub fn knn(&self, queries: &PointCloud, k: usize) -> Result<NeighborTable> {
        check_k(k, self.targets)?;
        let mut indices = Vec::with_capacity(queries.len() * k);
        let mut dists = Vec::with_capacity(queries.len() * k);
        if k > 0 {
            let mut best = Best::new(k);
            for q in queries.points() {
                self.search(q, &mut best);
                best.drain_into(&mut indices, &mut dists);
            }
        }
        Ok(NeighborTable { k, indices, dists })
    }
}

/// Grid-accelerated exact KNN; bit-identical to [`knn_brute`].
pub fn knn_accel(queries: &PointCloud, targets: &PointCloud, k: usize) -> Result<NeighborTable> {
    check_k(k, targets)?;
    GridIndex::build(targets).knn(queries, k)
}

/// Exact KNN choosing the cheaper search path for the problem size.
pub fn knn(queries: &PointCloud, targets: &PointCloud, k: usize) -> Result<NeighborTable> {
    if queries.len() * targets.len() <= 64 * 1024 {
        knn_brute(queries, targets, k)
    } else {
        knn_accel(queries, targets, k)
    }
}
