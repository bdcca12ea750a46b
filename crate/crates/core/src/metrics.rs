//! Scene-flow evaluation metrics, averaged over points and accumulated in f64.

use alloc::format;

use crate::predictor::SceneFlow;
use crate::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Strict accuracy thresholds: 0.05 m or 5 %.
pub const ACC3DS: (f64, f64) = (0.05, 0.05);
/// Relaxed accuracy thresholds: 0.1 m or 10 %.
pub const ACC3DR: (f64, f64) = (0.1, 0.1);
/// Outlier thresholds: above 0.3 m or above 10 %.
pub const OUT3D: (f64, f64) = (0.3, 0.1);

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub epe3d_m: f64,
    pub acc3ds: f64,
    pub acc3dr: f64,
    pub out3d: f64,
    pub point_count: usize,
}

impl MetricsReport {
    /// Point-weighted mean of several reports.
    pub fn merge(reports: &[MetricsReport]) -> MetricsReport {
        let n: usize = reports.iter().map(|r| r.point_count).sum();
        if n == 0 {
            return MetricsReport::default();
        }
        let w = |f: fn(&MetricsReport) -> f64| {
            reports.iter().map(|r| f(r) * r.point_count as f64).sum::<f64>() / n as f64
        };
        MetricsReport {
            epe3d_m: w(|r| r.epe3d_m),
            acc3ds: w(|r| r.acc3ds),
            acc3dr: w(|r| r.acc3dr),
            out3d: w(|r| r.out3d),
            point_count: n,
        }
    }
}

fn check(pred: &SceneFlow, gt: &SceneFlow) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!("{} predictions vs {} ground-truth rows", pred.len(), gt.len()),
        });
    }
    Ok(())
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// (error norm, ground-truth norm) per point.
fn errors<'a>(pred: &'a SceneFlow, gt: &'a SceneFlow) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.vectors().iter().zip(gt.vectors()).map(|(p, g)| {
        let g64 = [g[0] as f64, g[1] as f64, g[2] as f64];
        let e = [
            p[0] as f64 - g64[0],
            p[1] as f64 - g64[1],
            p[2] as f64 - g64[2],
        ];
        (norm(e), norm(g64))
    })
}

fn ratio(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

/// Mean end-point error in meters.
pub fn epe3d(pred: &SceneFlow, gt: &SceneFlow) -> Result<f64> {
    check(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(errors(pred, gt).map(|(e, _)| e).sum::<f64>() / pred.len() as f64)
}

/// Fraction of points with error below `abs_thresh` meters or relative error
/// below `rel_thresh`. The relative branch is skipped where the ground truth is zero.
pub fn accuracy(pred: &SceneFlow, gt: &SceneFlow, abs_thresh: f64, rel_thresh: f64) -> Result<f64> {
    check(pred, gt)?;
    if !(abs_thresh > 0.0 && rel_thresh > 0.0) {
        return Err(Error::Invalid("accuracy thresholds must be positive".into()));
    }
    let hits = errors(pred, gt)
        .filter(|&(e, g)| e < abs_thresh || (g > 0.0 && e / g < rel_thresh))
        .count();
    Ok(ratio(hits, pred.len()))
}

/// Fraction of points with error above `abs_thresh` meters or relative error
/// above `rel_thresh` (strict inequalities).
pub fn outliers_with(pred: &SceneFlow, gt: &SceneFlow, abs_thresh: f64, rel_thresh: f64) -> Result<f64> {
    check(pred, gt)?;
    let hits = errors(pred, gt)
        .filter(|&(e, g)| e > abs_thresh || (g > 0.0 && e / g > rel_thresh))
        .count();
    Ok(ratio(hits, pred.len()))
}

/// Out3D: error above 0.3 m or relative error above 10 %.
pub fn outliers(pred: &SceneFlow, gt: &SceneFlow) -> Result<f64> {
    outliers_with(pred, gt, OUT3D.0, OUT3D.1)
}

pub fn evaluate(pred: &SceneFlow, gt: &SceneFlow) -> Result<MetricsReport> {
    Ok(MetricsReport {
        epe3d_m: epe3d(pred, gt)?,
        acc3ds: accuracy(pred, gt, ACC3DS.0, ACC3DS.1)?,
        acc3dr: accuracy(pred, gt, ACC3DR.0, ACC3DR.1)?,
        out3d: outliers(pred, gt)?,
        point_count: pred.len(),
    })
}
