//! Evaluation: eval-mode BN, mean-mode latents, and the four Table-style
//! columns (EPE, ACC at each threshold, C.D.) aggregated as plain means
//! over per-task metrics.

use crate::cloud::TaskPair;
use crate::error::{Error, Result};
use crate::loss;
use crate::model::{ForwardOpts, Model};
use crate::par;

/// Aggregated metrics for one (split, mode) evaluation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub split: String,
    /// "meta_on" or "meta_off"
    pub mode: String,
    pub n_tasks: usize,
    pub epe: f64,
    /// One entry per configured threshold, same order.
    pub acc_thresholds: Vec<f64>,
    pub acc: Vec<f64>,
    pub chamfer: f64,
    /// Per-task EPEs, kept so report arithmetic is independently checkable.
    pub per_task_epe: Vec<f64>,
}

/// Metrics of a single task under one mode.
#[derive(Debug, Clone)]
pub struct TaskMetrics {
    pub epe: f64,
    pub acc: Vec<f64>,
    pub chamfer: f64,
}

pub fn evaluate_task(
    model: &Model,
    task: &TaskPair,
    meta_on: bool,
    thresholds: &[f64],
) -> Result<TaskMetrics> {
    let opts = ForwardOpts {
        zero_theta2: !meta_on,
        ..ForwardOpts::eval()
    };
    let (flow, moved) = model.predict(task, opts)?;
    let gt = &task.gt_flow.vectors;
    let epe = loss::epe(&flow, gt, &task.mask)?;
    let acc = thresholds
        .iter()
        .map(|&t| loss::acc(&flow, gt, &task.mask, t))
        .collect::<Result<Vec<f64>>>()?;
    let chamfer = loss::chamfer_metric(&moved, &task.target.points)?;
    Ok(TaskMetrics { epe, acc, chamfer })
}

/// Evaluate a task list; per-task work runs data-parallel, aggregation is
/// a plain mean so the report is a pure function of the per-task metrics.
pub fn evaluate(
    model: &Model,
    tasks: &[TaskPair],
    split: &str,
    meta_on: bool,
    thresholds: &[f64],
) -> Result<MetricsReport> {
    if tasks.is_empty() {
        return Err(Error::Structural {
            layer: "evaluate".into(),
            msg: "cannot evaluate an empty task set".into(),
        });
    }
    let per_task: Vec<TaskMetrics> =
        par::map_indexed(tasks.len(), |i| evaluate_task(model, &tasks[i], meta_on, thresholds))
            .into_iter()
            .collect::<Result<_>>()?;
    let n = per_task.len() as f64;
    let per_task_epe: Vec<f64> = per_task.iter().map(|m| m.epe).collect();
    let acc = (0..thresholds.len())
        .map(|k| per_task.iter().map(|m| m.acc[k]).sum::<f64>() / n)
        .collect();
    Ok(MetricsReport {
        split: split.to_string(),
        mode: if meta_on { "meta_on" } else { "meta_off" }.to_string(),
        n_tasks: per_task.len(),
        epe: per_task_epe.iter().sum::<f64>() / n,
        acc_thresholds: thresholds.to_vec(),
        acc,
        chamfer: per_task.iter().map(|m| m.chamfer).sum::<f64>() / n,
        per_task_epe,
    })
}
