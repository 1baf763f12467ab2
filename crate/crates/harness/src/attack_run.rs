//! The `attack` task: evaluate a saved checkpoint under each eval budget.

use std::path::Path;
use std::time::Instant;

use samlab_core::models::{Classifier, Model};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::results::{fmt_f64, RunRecord, Table, RECORD_FORMAT};
use crate::train::{build_data, evaluate};

/// Loads the checkpoint and attacks the test split of the configured data.
pub fn run_attack(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let path = &cfg.attack.as_ref().expect("validated").checkpoint;
    let model = Model::load(path)
        .map_err(|e| HarnessError::runtime(format!("{}: {e}", path.display())))?;
    let data = build_data(cfg.data.as_ref().expect("validated"), cfg.seed)?.test;
    if model.input_dim() != data.dim() {
        return Err(HarnessError::runtime(format!(
            "checkpoint expects {} input features, the data has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if model.num_classes() != data.task.num_classes() {
        return Err(HarnessError::runtime(format!(
            "checkpoint has {} classes, the data has {}",
            model.num_classes(),
            data.task.num_classes()
        )));
    }
    let (clean, robust) = evaluate(&model, &data, &cfg.eval, cfg.seed)?;
    Ok(RunRecord {
        format: RECORD_FORMAT.into(),
        config: cfg.clone(),
        seed: cfg.seed,
        epoch_loss: Vec::new(),
        clean_accuracy: clean,
        robust_accuracy: robust,
        wr_estimate: crate::train::wr_of(&model, cfg.data.as_ref().expect("validated")),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn attack_table(record: &RunRecord) -> Table {
    let columns = ["budget", "norm", "epsilon", "alpha", "steps", "random_start", "clean_acc", "robust_acc"];
    let mut table = Table::new("attack", columns.iter().map(|s| s.to_string()).collect());
    for r in &record.robust_accuracy {
        let b = &r.budget;
        let alpha = b.to_budget().map(|a| a.alpha).unwrap_or(f64::NAN);
        table.push(vec![
            b.label(),
            b.norm.clone(),
            fmt_f64(b.epsilon),
            fmt_f64(alpha),
            b.steps.to_string(),
            b.random_start.to_string(),
            fmt_f64(record.clean_accuracy),
            fmt_f64(r.accuracy),
        ]);
    }
    table
}

/// Writes `attack.csv` and `run.json` under `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<RunRecord> {
    let record = run_attack(cfg)?;
    std::fs::create_dir_all(out)?;
    attack_table(&record).write(&out.join("attack.csv"))?;
    record.write(&out.join("run.json"))?;
    Ok(record)
}
