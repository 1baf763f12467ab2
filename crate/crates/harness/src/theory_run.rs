//! The `theory` task: one report row per (spec, eps).

use std::path::Path;

use samlab_core::theory::{wr_sam_second_order, TheoryReport};
use serde::Serialize;

use crate::config::{RunConfig, TheoryConfig};
use crate::error::{HarnessError, Result};
use crate::results::{fmt_f64, Table};

/// One report plus the variance-aware expansion, in a serializable shape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub p: f64,
    pub eta: f64,
    pub n: usize,
    pub eps: f64,
    pub w1_star: f64,
    pub wr_star: f64,
    pub w1_at: f64,
    pub wr_at: f64,
    pub w1_sam: f64,
    pub wr_sam_numeric: f64,
    pub wr_sam_approx: f64,
    pub wr_sam_second_order: f64,
    pub eps_at_equiv: f64,
    pub eps_at_exact: f64,
    pub iterations: usize,
    pub residual: f64,
}

const COLUMNS: [&str; 16] = [
    "p",
    "eta",
    "n",
    "eps",
    "w1_star",
    "wr_star",
    "w1_at",
    "wr_at",
    "w1_sam",
    "wr_sam_numeric",
    "wr_sam_approx",
    "wr_sam_second_order",
    "eps_at_equiv",
    "eps_at_exact",
    "iterations",
    "residual",
];

impl TheoryRow {
    fn cells(&self) -> Vec<String> {
        let mut c: Vec<String> = [self.p, self.eta].iter().map(|&v| fmt_f64(v)).collect();
        c.push(self.n.to_string());
        c.extend(
            [
                self.eps,
                self.w1_star,
                self.wr_star,
                self.w1_at,
                self.wr_at,
                self.w1_sam,
                self.wr_sam_numeric,
                self.wr_sam_approx,
                self.wr_sam_second_order,
                self.eps_at_equiv,
                self.eps_at_exact,
            ]
            .iter()
            .map(|&v| fmt_f64(v)),
        );
        c.push(self.iterations.to_string());
        c.push(fmt_f64(self.residual));
        c
    }
}

/// Rows in spec order (p, then eta, then n), eps innermost.
pub fn run_theory(t: &TheoryConfig) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::new();
    for spec in t.specs() {
        for &eps in &t.eps {
            let ctx = |e: samlab_core::Error| {
                HarnessError::runtime(format!("p={} eta={} n={} eps={eps}: {e}", spec.p, spec.eta, spec.n))
            };
            let r = TheoryReport::compute(&spec, eps).map_err(ctx)?;
            rows.push(TheoryRow {
                p: spec.p,
                eta: spec.eta,
                n: spec.n,
                eps,
                w1_star: r.w1_star,
                wr_star: r.wr_star,
                w1_at: r.w1_at,
                wr_at: r.wr_at,
                w1_sam: r.w1_sam,
                wr_sam_numeric: r.wr_sam_numeric,
                wr_sam_approx: r.wr_sam_approx,
                wr_sam_second_order: wr_sam_second_order(&spec, eps).map_err(ctx)?,
                eps_at_equiv: r.eps_at_equiv,
                eps_at_exact: r.eps_at_exact,
                iterations: r.diagnostics.iterations,
                residual: r.diagnostics.residual,
            });
        }
    }
    Ok(rows)
}

pub fn theory_table(rows: &[TheoryRow]) -> Table {
    let mut table = Table::new("theory", COLUMNS.iter().map(|s| s.to_string()).collect());
    for r in rows {
        table.push(r.cells());
    }
    table
}

/// Writes `theory.csv` and `theory.json` under `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<Vec<TheoryRow>> {
    cfg.validate()?;
    let rows = run_theory(cfg.theory.as_ref().expect("validated"))?;
    std::fs::create_dir_all(out)?;
    theory_table(&rows).write(&out.join("theory.csv"))?;
    let json = serde_json::json!({
        "format": "samlab-theory v1",
        "seed": cfg.seed,
        "reports": rows,
    });
    let text = serde_json::to_string_pretty(&json).map_err(HarnessError::runtime)?;
    std::fs::write(out.join("theory.json"), text + "\n")?;
    Ok(rows)
}
