//! Versioned result CSVs and JSON run records.

use std::path::Path;

use samlab_core::data::{to_delimited, Dataset};
use serde::{Deserialize, Serialize};

use crate::config::{BudgetConfig, RunConfig};
use crate::error::{HarnessError, Result};

/// First line of every results CSV.
pub const RESULTS_HEADER: &str = "# samlab-results v1";
pub const RECORD_FORMAT: &str = "samlab-run v1";

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A results table: a kind tag, column names, and rows of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(kind: &str, columns: Vec<String>) -> Self {
        Self {
            kind: kind.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("{RESULTS_HEADER} kind={}\n", self.kind);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let body = w.into_inner().map_err(|e| HarnessError::runtime(e.error()))?;
        out.push_str(&String::from_utf8(body).expect("utf-8 cells"));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    /// Reads a table written by [`Table::write`] (or any CSV with `#`
    /// comment lines).
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let kind = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix(RESULTS_HEADER))
            .and_then(|rest| rest.trim().strip_prefix("kind="))
            .unwrap_or("")
            .to_string();
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(String::from).collect());
        }
        Ok(Self { kind, columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Writes a dataset as delimited text under the results header, so
/// [`samlab_core::data::load_delimited`] reads it back exactly.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut text = format!("{RESULTS_HEADER} kind=dataset\n");
    text.push_str(&to_delimited(dataset));
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustResult {
    pub budget: BudgetConfig,
    pub accuracy: f64,
}

/// Everything one run produced, with its full config embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: String,
    pub config: RunConfig,
    pub seed: u64,
    pub epoch_loss: Vec<f64>,
    pub clean_accuracy: f64,
    pub robust_accuracy: Vec<RobustResult>,
    /// Robust feature weight of a linear model trained on feature-model data.
    pub wr_estimate: Option<f64>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(HarnessError::runtime)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(HarnessError::runtime)
    }
}

/// Metric columns shared by train and sweep tables.
pub fn metric_columns(evals: &[BudgetConfig]) -> Vec<String> {
    let mut cols = vec![
        "final_loss".to_string(),
        "clean_acc".to_string(),
        "wr_estimate".to_string(),
    ];
    cols.extend(evals.iter().map(BudgetConfig::label));
    cols
}

pub fn metric_cells(record: &RunRecord, evals: usize) -> Vec<String> {
    let mut cells = vec![
        record.epoch_loss.last().map_or(String::new(), |&v| fmt_f64(v)),
        fmt_f64(record.clean_accuracy),
        record.wr_estimate.map_or(String::new(), fmt_f64),
    ];
    for i in 0..evals {
        cells.push(
            record
                .robust_accuracy
                .get(i)
                .map_or(String::new(), |r| fmt_f64(r.accuracy)),
        );
    }
    cells
}
