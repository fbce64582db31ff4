//! Checkpoint serialization. One binary file: the magic `MREG1\n`, then a
//! sequence of named tensors — a UTF-8 name line, a `rank dims...` line,
//! and little-endian 64-bit IEEE values in row-major order.
//!
//! Optimizer moments, BN running stats, the step counter, the config
//! fingerprint and the theta2 partition map are stored as reserved-prefix
//! tensors alongside the parameters, so one format covers the whole
//! training state bit-exactly.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner::{Theta2Entry, Theta2Layout};
use crate::tensor::adam::{AdamConfig, AdamState};
use crate::tensor::{BnStats, ParamStore};

const MAGIC: &[u8] = b"MREG1\n";

/// Raw named-tensor container (the on-disk schema).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, [usize; 2], Vec<f64>)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, shape: [usize; 2], values: Vec<f64>) {
        debug_assert_eq!(shape[0] * shape[1], values.len());
        self.tensors.push((name.into(), shape, values));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize; 2], &[f64])> {
        self.tensors
            .iter()
            .find(|(n, ..)| n == name)
            .map(|(_, s, v)| (s, v.as_slice()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some((_, v)) if v.len() == 1 => Ok(v[0]),
            Some(_) => Err(Error::Checkpoint(format!("`{name}` is not a scalar"))),
            None => Err(Error::Checkpoint(format!("missing tensor `{name}`"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let ioerr = |e| Error::io(path.display().to_string(), e);
        w.write_all(MAGIC).map_err(ioerr)?;
        for (name, shape, values) in &self.tensors {
            writeln!(w, "{name}").map_err(ioerr)?;
            writeln!(w, "2 {} {}", shape[0], shape[1]).map_err(ioerr)?;
            for v in values {
                w.write_all(&v.to_le_bytes()).map_err(ioerr)?;
            }
        }
        w.flush().map_err(ioerr)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header".into()))?;
        if magic != MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let mut tensors = Vec::new();
        loop {
            let mut name = String::new();
            let n = r
                .read_line(&mut name)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            if n == 0 {
                break;
            }
            let name = name.trim_end_matches('\n').to_string();
            let mut dims = String::new();
            r.read_line(&mut dims)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let parts: Vec<usize> = dims
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("tensor `{name}`: bad dims line ({e})")))?;
            if parts.len() != 3 || parts[0] != 2 {
                return Err(bad(format!("tensor `{name}`: expected `2 rows cols`")));
            }
            let count = parts[1] * parts[2];
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf)
                .map_err(|_| bad(format!("tensor `{name}`: truncated values")))?;
            let values: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, [parts[1], parts[2]], values));
        }
        Ok(Checkpoint { tensors })
    }
}

/// Everything a training run needs to resume bit-exactly.
pub struct TrainState {
    pub step: u64,
    pub fingerprint: u64,
    pub layout: Theta2Layout,
}

/// Bundle the full training state into a checkpoint.
pub fn encode_state(
    store: &ParamStore,
    bn: &BnStats,
    adam: &AdamState,
    layout: &Theta2Layout,
    step: u64,
    fingerprint: u64,
) -> Checkpoint {
    let mut ck = Checkpoint::default();
    for (id, name, values) in store.iter() {
        ck.push(name, store.shape(id), values.to_vec());
    }
    for id in 0..store.len() {
        let name = store.name(id);
        ck.push(
            format!("adam_m/{name}"),
            store.shape(id),
            adam.m[id].clone(),
        );
        ck.push(
            format!("adam_v/{name}"),
            store.shape(id),
            adam.v[id].clone(),
        );
    }
    for id in 0..bn.len() {
        let c = bn.mean[id].len();
        ck.push(format!("bn_mean/{}", bn.name(id)), [1, c], bn.mean[id].clone());
        ck.push(format!("bn_var/{}", bn.name(id)), [1, c], bn.var[id].clone());
    }
    for e in &layout.entries {
        ck.push(
            format!("theta2_map/{}", e.name),
            [1, 3],
            vec![e.offset as f64, e.rows as f64, e.cols as f64],
        );
    }
    ck.push("meta/step", [1, 1], vec![f64::from_bits(step)]);
    ck.push("meta/fingerprint", [1, 1], vec![f64::from_bits(fingerprint)]);
    ck
}

/// Restore parameters, BN stats and Adam moments in place. Returns the
/// step counter, fingerprint and theta2 map found in the checkpoint.
pub fn decode_state(
    ck: &Checkpoint,
    store: &mut ParamStore,
    bn: &mut BnStats,
    adam_cfg: AdamConfig,
) -> Result<(AdamState, TrainState)> {
    let mut adam = AdamState::new(store, adam_cfg);
    for id in 0..store.len() {
        let name = store.name(id).to_string();
        let shape = store.shape(id);
        let fetch = |key: &str| -> Result<&[f64]> {
            match ck.get(key) {
                Some((s, v)) if *s == shape => Ok(v),
                Some((s, _)) => Err(Error::Checkpoint(format!(
                    "tensor `{key}`: shape {s:?} does not match model {shape:?}"
                ))),
                None => Err(Error::Checkpoint(format!("missing tensor `{key}`"))),
            }
        };
        store.value_mut(id).copy_from_slice(fetch(&name)?);
        adam.m[id].copy_from_slice(fetch(&format!("adam_m/{name}"))?);
        adam.v[id].copy_from_slice(fetch(&format!("adam_v/{name}"))?);
    }
    for id in 0..bn.len() {
        let name = bn.name(id).to_string();
        for (prefix, dst) in [("bn_mean", true), ("bn_var", false)] {
            let key = format!("{prefix}/{name}");
            let (_, v) = ck
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
            if dst {
                bn.mean[id].copy_from_slice(v);
            } else {
                bn.var[id].copy_from_slice(v);
            }
        }
    }
    let mut entries = Vec::new();
    for (name, _, v) in &ck.tensors {
        if let Some(stripped) = name.strip_prefix("theta2_map/") {
            entries.push(Theta2Entry {
                name: stripped.to_string(),
                offset: v[0] as usize,
                rows: v[1] as usize,
                cols: v[2] as usize,
            });
        }
    }
    let total = entries.iter().map(|e| e.rows * e.cols).sum();
    let layout = Theta2Layout { entries, total };
    let step = ck.scalar("meta/step")?.to_bits();
    let fingerprint = ck.scalar("meta/fingerprint")?.to_bits();
    adam.t = step;
    Ok((
        adam,
        TrainState {
            step,
            fingerprint,
            layout,
        },
    ))
}

/// Refuse to resume/evaluate when the stored fingerprint differs; the
/// message names both digests so the mismatch is diagnosable.
pub fn check_fingerprint(expected: u64, found: u64) -> Result<()> {
    if expected != found {
        return Err(Error::Checkpoint(format!(
            "config fingerprint mismatch: checkpoint {found:016x}, current config {expected:016x} \
             (the checkpoint was produced by a different configuration)"
        )));
    }
    Ok(())
}
