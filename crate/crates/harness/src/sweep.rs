//! The `sweep` task: independent training runs over a parameter grid.
//!
//! Grid keys are dotted config paths, expanded as a cartesian product in
//! key order with the last key varying fastest. Run `i` (grid point `g`,
//! replicate `r`, `i = g * replicates + r`) uses seed
//! `derive_seed(master seed, i)`, so every row can be rerun on its own.
//! With `common_seeds` the seed is `derive_seed(master seed, r)` instead.

use std::path::Path;

use rayon::prelude::*;
use samlab_core::rng::derive_seed;

use crate::config::{from_table, set_path, RunConfig, TaskKind};
use crate::error::{HarnessError, Result};
use crate::results::{metric_cells, metric_columns, RunRecord, Table};
use crate::train::run_train;

/// One child run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepJob {
    pub index: usize,
    pub point: usize,
    pub replicate: usize,
    pub values: Vec<toml::Value>,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub job: SweepJob,
    pub outcome: std::result::Result<RunRecord, String>,
}

fn cell(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Expands the grid into child configs. Any override that does not produce
/// a valid config is a config error, reported before any run starts.
pub fn plan(cfg: &RunConfig) -> Result<Vec<SweepJob>> {
    cfg.validate()?;
    let sweep = cfg.sweep.as_ref().expect("validated");
    let mut base = match toml::Value::try_from(cfg).map_err(HarnessError::runtime)? {
        toml::Value::Table(t) => t,
        _ => unreachable!("a config serializes to a table"),
    };
    base.remove("sweep");
    base.insert("task".into(), toml::Value::String("train".into()));

    let keys: Vec<&String> = sweep.grid.keys().collect();
    let sizes: Vec<usize> = sweep.grid.values().map(Vec::len).collect();
    let points: usize = sizes.iter().product();
    let mut jobs = Vec::with_capacity(points * sweep.replicates);
    let mut errors = Vec::new();
    for point in 0..points {
        let mut rem = point;
        let mut picks = vec![0; keys.len()];
        for k in (0..keys.len()).rev() {
            picks[k] = rem % sizes[k];
            rem /= sizes[k];
        }
        let values: Vec<toml::Value> = keys
            .iter()
            .zip(&picks)
            .map(|(k, &i)| sweep.grid[*k][i].clone())
            .collect();
        let mut table = base.clone();
        let mut bad = false;
        for (k, v) in keys.iter().zip(&values) {
            if let Err(e) = set_path(&mut table, k, v.clone()) {
                errors.push(format!("sweep.grid: {e}"));
                bad = true;
            }
        }
        if bad {
            continue;
        }
        let child = match from_table(table).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => c,
            Err(HarnessError::Config(es)) => {
                let at: Vec<String> = keys.iter().zip(&values).map(|(k, v)| format!("{k}={}", cell(v))).collect();
                errors.extend(es.into_iter().map(|e| format!("grid point [{}]: {e}", at.join(", "))));
                continue;
            }
            Err(e) => return Err(e),
        };
        for replicate in 0..sweep.replicates {
            let index = point * sweep.replicates + replicate;
            let mut config = child.clone();
            let stream = if sweep.common_seeds { replicate } else { index };
            config.seed = derive_seed(cfg.seed, stream as u64);
            config.task = TaskKind::Train;
            jobs.push(SweepJob {
                index,
                point,
                replicate,
                values: values.clone(),
                config,
            });
        }
    }
    if errors.is_empty() {
        Ok(jobs)
    } else {
        Err(HarnessError::Config(errors))
    }
}

/// Runs every job on a pool of `parallel` threads. Rows come back in index
/// order whatever the scheduling.
pub fn run_sweep(cfg: &RunConfig, parallel: usize) -> Result<Vec<SweepRow>> {
    let jobs = plan(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(HarnessError::runtime)?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        jobs.into_par_iter()
            .map(|job| {
                let outcome = run_train(&job.config)
                    .map(|o| o.record)
                    .map_err(|e| e.to_string());
                SweepRow { job, outcome }
            })
            .collect()
    });
    rows.sort_by_key(|r| r.job.index);
    Ok(rows)
}

pub fn sweep_table(cfg: &RunConfig, rows: &[SweepRow]) -> Table {
    let sweep = cfg.sweep.as_ref().expect("sweep config");
    let mut columns = vec!["index".to_string(), "point".into(), "replicate".into(), "seed".into()];
    columns.extend(sweep.grid.keys().cloned());
    columns.push("status".into());
    columns.push("error".into());
    columns.extend(metric_columns(&cfg.eval));
    let mut table = Table::new("sweep", columns);
    for r in rows {
        let j = &r.job;
        let mut row = vec![
            j.index.to_string(),
            j.point.to_string(),
            j.replicate.to_string(),
            j.config.seed.to_string(),
        ];
        row.extend(j.values.iter().map(cell));
        match &r.outcome {
            Ok(record) => {
                row.push("ok".into());
                row.push(String::new());
                row.extend(metric_cells(record, cfg.eval.len()));
            }
            Err(e) => {
                row.push("error".into());
                row.push(e.clone());
                row.extend(std::iter::repeat_n(String::new(), 3 + cfg.eval.len()));
            }
        }
        table.push(row);
    }
    table
}

/// Writes `sweep.csv` and `sweep.json` (all records) under `out`.
pub fn execute(cfg: &RunConfig, parallel: usize, out: &Path) -> Result<Vec<SweepRow>> {
    let rows = run_sweep(cfg, parallel)?;
    std::fs::create_dir_all(out)?;
    sweep_table(cfg, &rows).write(&out.join("sweep.csv"))?;
    let records: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| match &r.outcome {
            Ok(rec) => serde_json::json!({ "index": r.job.index, "record": rec }),
            Err(e) => serde_json::json!({ "index": r.job.index, "error": e }),
        })
        .collect();
    let text = serde_json::to_string_pretty(&records).map_err(HarnessError::runtime)?;
    std::fs::write(out.join("sweep.json"), text + "\n")?;
    Ok(rows)
}
