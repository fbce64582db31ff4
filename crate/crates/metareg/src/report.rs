//! Run reports: machine-readable JSON records plus an aligned plain-text
//! table. One record per (preset, label, seed, split, mode) evaluation; the
//! JSON keys below are the stable interface for downstream tooling.

use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use std::path::Path;

/// One evaluation outcome with the run metadata needed to identify it.
///
/// Stable JSON keys: `preset`, `label`, `seed`, `split`, `mode`, `n_tasks`,
/// `epe`, `acc_thresholds`, `acc`, `chamfer`, `per_task_epe`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    /// Experiment preset name, or "run" for plain train/eval invocations.
    pub preset: String,
    /// Row key within the preset: "v=32", "gaussian", "baseline", ...
    pub label: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

impl RunRecord {
    pub fn new(preset: &str, label: &str, seed: u64, metrics: MetricsReport) -> Self {
        RunRecord {
            preset: preset.to_string(),
            label: label.to_string(),
            seed,
            metrics,
        }
    }
}

pub fn to_json(records: &[RunRecord]) -> Result<String> {
    serde_json::to_string_pretty(records)
        .map_err(|e| Error::Usage(format!("report serialization failed: {e}")))
}

pub fn from_json(text: &str) -> Result<Vec<RunRecord>> {
    serde_json::from_str(text).map_err(|e| Error::Usage(format!("report parse failed: {e}")))
}

/// Aligned plain-text table over all records. Column set is fixed:
/// preset, label, seed, split, mode, tasks, EPE, one ACC column per
/// threshold (taken from the first record), C.D.
pub fn render_table(records: &[RunRecord]) -> String {
    let thresholds: &[f64] = records
        .first()
        .map(|r| r.metrics.acc_thresholds.as_slice())
        .unwrap_or(&[]);
    let mut header: Vec<String> = ["preset", "label", "seed", "split", "mode", "tasks", "EPE"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for t in thresholds {
        header.push(format!("ACC({t})"));
    }
    header.push("C.D.".to_string());

    let mut rows = vec![header];
    for r in records {
        let mut row = vec![
            r.preset.clone(),
            r.label.clone(),
            r.seed.to_string(),
            r.metrics.split.clone(),
            r.metrics.mode.clone(),
            r.metrics.n_tasks.to_string(),
            format!("{:.4}", r.metrics.epe),
        ];
        for a in &r.metrics.acc {
            row.push(format!("{a:.4}"));
        }
        row.push(format!("{:.4}", r.metrics.chamfer));
        rows.push(row);
    }

    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{:>w$}", s, w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Write `<stem>.json` (records) and `<stem>.txt` (table) under `dir`.
pub fn write_report(dir: &Path, stem: &str, records: &[RunRecord]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, to_json(records)?)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let txt_path = dir.join(format!("{stem}.txt"));
    std::fs::write(&txt_path, render_table(records))
        .map_err(|e| Error::io(txt_path.display().to_string(), e))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<RunRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_json(&text)
}
