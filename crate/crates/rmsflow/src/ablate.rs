//! Trains the five cumulative embedding variants under one budget and seed
//! and scores each on the validation split.

use std::path::Path;

use rmsflow_core::data::ScenePair;
use rmsflow_core::flowembed::AblationFlags;
use rmsflow_core::metrics::MetricsReport;

use crate::config::{PyramidMode, RunConfig};
use crate::eval::{aggregate, evaluate_scenes, EvalOptions};
use crate::trainer::{TrainError, Trainer};

pub const ABLATE_HEADER: &str = "row,stage1,stage2,concat,residual,stage3,epe3d,acc3ds,acc3dr,out3d";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub row: usize,
    pub flags: AblationFlags,
    pub report: MetricsReport,
}

impl AblationRow {
    pub fn csv(&self) -> String {
        let b = |v: bool| if v { "1" } else { "0" };
        let f = &self.flags;
        format!(
            "{},1,{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.row,
            b(f.stage2),
            b(f.concat),
            b(f.residual),
            b(f.stage3),
            self.report.epe3d_m,
            self.report.acc3ds,
            self.report.acc3dr,
            self.report.out3d
        )
    }
}

/// Last-epoch weights of each variant, evaluated on `val` at the training point count.
pub fn run(
    cfg: &RunConfig,
    train: &[ScenePair],
    val: &[ScenePair],
    out_dir: Option<&Path>,
    verbose: bool,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::new();
    for (i, flags) in AblationFlags::ablation_rows().into_iter().enumerate() {
        let mut c = cfg.clone();
        c.set_flags(flags);
        let dir = out_dir.map(|d| d.join(format!("row{}", i + 1)));
        if verbose {
            eprintln!("ablation row {}: {flags:?}", i + 1);
        }
        let outcome = Trainer {
            cfg: &c,
            train,
            val,
            out_dir: dir.as_deref(),
            resume: false,
            budget_s: None,
            verbose,
        }
        .run()?;
        let opts = EvalOptions {
            seed: c.seed,
            tag: "ablate",
            points: c.train_points,
            threads: c.threads,
            oracle: false,
        };
        let results = evaluate_scenes(&outcome.last, &c.net(PyramidMode::Standard), val, &opts)?;
        rows.push(AblationRow {
            row: i + 1,
            flags,
            report: aggregate(&results),
        });
    }
    Ok(rows)
}

pub fn ablate_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}
