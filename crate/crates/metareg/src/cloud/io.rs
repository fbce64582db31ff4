//! Cloud and manifest file formats.
//!
//! Cloud files are UTF-8 text, one `x y z` per line. Values print with
//! shortest-exact decimal formatting, so write -> read round-trips every
//! f64 bit-exactly. Manifests are JSON with a schema version field.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowField, NoiseKind, PointCloud};
use crate::cloud::Category;
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "metareg-manifest-v1";

fn format_rows(rows: &[[f64; 3]]) -> String {
    let mut s = String::new();
    for r in rows {
        // `{}` on f64 is shortest round-trip decimal
        writeln!(s, "{} {} {}", r[0], r[1], r[2]).unwrap();
    }
    s
}

fn parse_rows(path: &str, text: &str) -> Result<Vec<[f64; 3]>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: format!("expected 3 fields, got {}", parts.len()),
            });
        }
        let mut row = [0.0; 3];
        for (k, p) in parts.iter().enumerate() {
            row[k] = p.parse().map_err(|e| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                msg: format!("bad number `{p}`: {e}"),
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, format_rows(&cloud.points))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(PointCloud::from_points(parse_rows(
        &path.display().to_string(),
        &text,
    )?))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, format_rows(&flow.vectors))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(FlowField {
        vectors: parse_rows(&path.display().to_string(), &text)?,
    })
}

/// One dataset task as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestTask {
    pub source_path: String,
    pub target_path: String,
    pub flow_path: String,
    pub category: Category,
    pub noise: NoiseKind,
    pub seed: u64,
    /// Source indices with a valid ground-truth flow.
    pub mask_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub schema: String,
    pub master_seed: u64,
    pub tasks: Vec<ManifestTask>,
}

impl Manifest {
    pub fn new(master_seed: u64) -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            master_seed,
            tasks: Vec::new(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Usage(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if m.schema != MANIFEST_SCHEMA {
        return Err(Error::Usage(format!(
            "unsupported manifest schema `{}` (want {MANIFEST_SCHEMA})",
            m.schema
        )));
    }
    Ok(m)
}

/// Write a task set as cloud/flow files plus `manifest.json` under `dir`.
pub fn save_dataset(dir: &Path, tasks: &[super::TaskPair], master_seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = Manifest::new(master_seed);
    for (i, task) in tasks.iter().enumerate() {
        let source_path = format!("task_{i:04}_source.xyz");
        let target_path = format!("task_{i:04}_target.xyz");
        let flow_path = format!("task_{i:04}_flow.xyz");
        write_cloud(&dir.join(&source_path), &task.source)?;
        write_cloud(&dir.join(&target_path), &task.target)?;
        write_flow(&dir.join(&flow_path), &task.gt_flow)?;
        manifest.tasks.push(ManifestTask {
            source_path,
            target_path,
            flow_path,
            category: task.category,
            noise: task.noise,
            seed: task.seed,
            mask_indices: task.masked_indices(),
        });
    }
    write_manifest(&dir.join("manifest.json"), &manifest)
}

/// Read a dataset written by [`save_dataset`]. Returns the tasks and the
/// master seed recorded in the manifest.
pub fn load_dataset(dir: &Path) -> Result<(Vec<super::TaskPair>, u64)> {
    let manifest = read_manifest(&dir.join("manifest.json"))?;
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for mt in &manifest.tasks {
        let mut source = read_cloud(&dir.join(&mt.source_path))?;
        let target = read_cloud(&dir.join(&mt.target_path))?;
        let gt_flow = read_flow(&dir.join(&mt.flow_path))?;
        source.category = Some(mt.category);
        source.seed = Some(mt.seed);
        if gt_flow.vectors.len() != source.points.len() {
            return Err(Error::Usage(format!(
                "{}: flow has {} rows but source has {} points",
                mt.flow_path,
                gt_flow.vectors.len(),
                source.points.len()
            )));
        }
        let mut mask = vec![false; source.points.len()];
        for &ix in &mt.mask_indices {
            if ix >= mask.len() {
                return Err(Error::Usage(format!(
                    "manifest mask index {ix} out of range for {} points",
                    mask.len()
                )));
            }
            mask[ix] = true;
        }
        tasks.push(super::TaskPair {
            source,
            target,
            gt_flow,
            mask,
            noise: mt.noise,
            category: mt.category,
            seed: mt.seed,
        });
    }
    Ok((tasks, manifest.master_seed))
}
