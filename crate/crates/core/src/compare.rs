//! Cross-run comparison: final best accuracy, bytes, and convergence per
//! run, plus the pairwise accuracy spread across strategies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RunSummary;

pub const TABLE_HEADER: &str =
    "run | final_best_acc | final_acc | total_bytes | converged_round";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub final_mean_best_accuracy: f64,
    pub final_mean_accuracy: f64,
    pub total_bytes: u64,
    pub converged_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<ComparisonRow>,
    /// max - min of final mean best accuracy across the compared runs.
    pub accuracy_spread: f64,
}

impl ComparisonReport {
    pub fn from_summaries(named: Vec<(String, RunSummary)>) -> Result<Self> {
        if named.is_empty() {
            return Err(Error::config("compare needs at least one run directory"));
        }
        let runs: Vec<ComparisonRow> = named
            .into_iter()
            .map(|(name, s)| ComparisonRow {
                name: s.preset.unwrap_or(name),
                final_mean_best_accuracy: s.final_mean_best_accuracy,
                final_mean_accuracy: s.final_mean_accuracy,
                total_bytes: s.total_bytes,
                converged_round: s.converged_round,
            })
            .collect();
        let max = runs.iter().map(|r| r.final_mean_best_accuracy).fold(f64::NEG_INFINITY, f64::max);
        let min = runs.iter().map(|r| r.final_mean_best_accuracy).fold(f64::INFINITY, f64::min);
        Ok(ComparisonReport { runs, accuracy_spread: max - min })
    }

    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(TABLE_HEADER);
        out.push('\n');
        for r in &self.runs {
            out.push_str(&format!(
                "{} | {:.4} | {:.4} | {} | {}\n",
                r.name,
                r.final_mean_best_accuracy,
                r.final_mean_accuracy,
                r.total_bytes,
                r.converged_round.map_or_else(|| "-".into(), |v| v.to_string()),
            ));
        }
        out.push_str(&format!("accuracy_spread = {:.4}\n", self.accuracy_spread));
        out
    }
}

/// Reads `summary.json` from a run directory.
pub fn load_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::NotFound(format!("run summary {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Ingestion {
        row: 0,
        msg: format!("incompatible summary {}: {e}", path.display()),
    })
}

/// Loads every directory's summary and builds the comparison report.
pub fn compare_dirs(dirs: &[std::path::PathBuf]) -> Result<ComparisonReport> {
    let mut named = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        named.push((name, load_summary(dir)?));
    }
    ComparisonReport::from_summaries(named)
}
