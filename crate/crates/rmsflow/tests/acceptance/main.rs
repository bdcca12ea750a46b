//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! `cargo test -p rmsflow --test acceptance -- A2 A5` runs a subset. A failed
//! criterion is reported, not raised; set `ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a non-zero exit status.

mod exact;
mod grad;
mod kernels;
mod learning;

use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    pub fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

const ALL: [&str; 9] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9"];

fn main() {
    let picked: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| ALL.contains(&a.as_str()))
        .collect();
    let ids: Vec<&str> = if picked.is_empty() {
        ALL.to_vec()
    } else {
        ALL.iter().copied().filter(|id| picked.iter().any(|p| p == id)).collect()
    };

    // A3, A4 and A6 share one trained desk model.
    let mut desk: Option<Result<learning::Desk, String>> = None;
    let mut failed = 0;
    for id in ids {
        let t = Instant::now();
        let v = match id {
            "A1" => grad::a1(),
            "A2" => kernels::a2(),
            "A5" => kernels::a5(),
            "A7" => learning::a7(),
            "A8" => exact::a8(),
            "A9" => exact::a9(),
            _ => match desk.get_or_insert_with(learning::Desk::train) {
                Err(e) => Verdict::error(e),
                Ok(d) => match id {
                    "A3" => d.a3(),
                    "A4" => d.a4(),
                    _ => d.a6(),
                },
            },
        };
        if !v.pass {
            failed += 1;
        }
        println!(
            "{id} {} {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
