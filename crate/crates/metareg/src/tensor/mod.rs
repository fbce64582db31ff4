//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Values are computed eagerly as nodes are appended to a [`Graph`] (a tape),
//! so data-dependent control flow (neighborhood queries on intermediate
//! clouds) can read values mid-build. `backward` then walks the tape in
//! reverse, visiting each node exactly once.
//!
//! Everything is 64-bit: gradient checks at 1e-4 tolerance are not reliable
//! in 32-bit.

pub mod adam;
pub mod gradcheck;
pub mod kernels;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use kernels::{mm_nn, mm_nt, mm_tn};

pub type NodeId = usize;
pub type ParamId = usize;
pub type BnId = usize;

/// Named bank of trainable parameters; the single mutable store shared by
/// learner and meta-learner. Updated only between training steps.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    shapes: Vec<[usize; 2]>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: [usize; 2], values: Vec<f64>) -> ParamId {
        assert_eq!(shape[0] * shape[1], values.len(), "param {name}");
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = self.names.len();
        self.names.push(name.to_string());
        self.values.push(values);
        self.shapes.push(shape);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn shape(&self, id: ParamId) -> [usize; 2] {
        self.shapes[id]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &[f64])> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.as_str(), self.values[i].as_slice()))
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Running batch-norm statistics, one (mean, var) pair per BN layer.
/// Updates are collected by the graph during train-mode forwards and applied
/// by the caller between steps, in recorded order.
#[derive(Debug, Clone, Default)]
pub struct BnStats {
    names: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
    by_name: HashMap<String, BnId>,
}

impl BnStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, channels: usize) -> BnId {
        let id = self.names.len();
        self.names.push(name.to_string());
        self.mean.push(vec![0.0; channels]);
        self.var.push(vec![1.0; channels]);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<BnId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: BnId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn apply_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let m = &mut self.mean[u.id];
            let v = &mut self.var[u.id];
            for c in 0..m.len() {
                m[c] = (1.0 - u.momentum) * m[c] + u.momentum * u.mean[c];
                v[c] = (1.0 - u.momentum) * v[c] + u.momentum * u.var[c];
            }
        }
    }
}

/// A pending running-stat update recorded by a train-mode BN forward.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub id: BnId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
struct BnCache {
    inv_std: Vec<f64>,
    xhat: Vec<f64>,
    train: bool,
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[n,c] + [1,c]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    /// Per-segment, per-channel max over contiguous row ranges.
    /// `argmax[s * c + j]` is the absolute winning row, ties to lowest index.
    SegmentMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Gather {
        x: NodeId,
        rows: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    /// Contiguous range of the row-major flattening of `x`.
    Slice {
        x: NodeId,
        start: usize,
    },
    SumAll(NodeId),
    SumRows(NodeId),
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        cache: BnCache,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Abs(_) => "abs",
            Op::Scale(..) => "scale",
            Op::AddConst(_) => "add_const",
            Op::SegmentMax { .. } => "segment_max",
            Op::Gather { .. } => "gather",
            Op::ConcatCols(_) => "concat_cols",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::SumAll(_) => "sum_all",
            Op::SumRows(_) => "sum_rows",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

struct Node {
    shape: [usize; 2],
    values: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Append-only computation tape. One training step builds, runs and frees
/// one graph; separate graphs never share state.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
    /// Smallest |pre-activation| seen at any ReLU input, smallest top-2 gap
    /// at any segment max, smallest value at any sqrt input. Gradcheck uses
    /// these to resample near non-differentiable points.
    pub kink_margin: f64,
}

pub enum BnMode {
    Train,
    Eval,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bn_updates: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    fn push(&mut self, shape: [usize; 2], values: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape[0] * shape[1], values.len());
        self.nodes.push(Node {
            shape,
            values,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id].shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].values
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].values.len(), 1);
        self.nodes[id].values[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    // ---- leaves ----

    pub fn constant(&mut self, shape: [usize; 2], values: Vec<f64>) -> NodeId {
        self.push(shape, values, Op::Const, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant([1, 1], vec![v])
    }

    /// Leaf bound to a store parameter; backward accumulates into its slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(
            store.shape(id),
            store.value(id).to_vec(),
            Op::Param(id),
            true,
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [n, k] = self.shape(a);
        let [k2, m] = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![n, k],
                rhs: vec![k2, m],
            });
        }
        let mut out = vec![0.0; n * m];
        mm_nn(
            &self.nodes[a].values,
            &self.nodes[b].values,
            &mut out,
            n,
            k,
            m,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push([n, m], out, Op::Matmul(a, b), ng))
    }

    fn binary(&mut self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok((sa[0], sa[1]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b)?;
        let out: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a), out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b)?;
        let out: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(x, y)| x - y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a), out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b)?;
        let out: Vec<f64> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a), out, Op::Mul(a, b), ng))
    }

    /// `[n,c] + [1,c]` row broadcast (bias addition).
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let [n, c] = self.shape(a);
        let sb = self.shape(bias);
        if sb != [1, c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vec![n, c],
                rhs: sb.to_vec(),
            });
        }
        let mut out = self.nodes[a].values.clone();
        let b = &self.nodes[bias].values;
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push([n, c], out, Op::AddBias(a, bias), ng))
    }

    // ---- elementwise unary ----

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: impl Fn(NodeId) -> Op) -> NodeId {
        let out: Vec<f64> = self.nodes[x].values.iter().map(|&v| f(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x), out, op(x), ng)
    }

    /// ReLU; gradient defined as 0 at exactly 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut margin = f64::INFINITY;
        let out: Vec<f64> = self.nodes[x]
            .values
            .iter()
            .map(|&v| {
                margin = margin.min(v.abs());
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        self.kink_margin = self.kink_margin.min(margin);
        let ng = self.ng(x);
        self.push(self.shape(x), out, Op::Relu(x), ng)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(v) = self.nodes[x].values.iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("non-positive input {v}"),
            });
        }
        Ok(self.unary(x, f64::ln, Op::Log))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square)
    }

    /// Gradient defined as 0 at exactly 0.
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(v) = self.nodes[x].values.iter().find(|v| **v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                msg: format!("negative input {v}"),
            });
        }
        let margin = self.nodes[x]
            .values
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
        self.kink_margin = self.kink_margin.min(margin);
        Ok(self.unary(x, f64::sqrt, Op::Sqrt))
    }

    /// Gradient defined as 0 at exactly 0.
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let margin = self.nodes[x]
            .values
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
        self.kink_margin = self.kink_margin.min(margin);
        self.unary(x, f64::abs, Op::Abs)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(x, |v| v * s, |n| Op::Scale(n, s))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v + c, Op::AddConst)
    }

    // ---- structure ----

    /// Channel-wise max over contiguous row segments. Ties break toward the
    /// lowest row index. Every segment must be nonempty.
    pub fn segment_max(&mut self, x: NodeId, segments: Vec<(usize, usize)>) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        let ns = segments.len();
        let mut out = vec![0.0; ns * c];
        let mut argmax = vec![0usize; ns * c];
        let xv = &self.nodes[x].values;
        for (s, &(lo, hi)) in segments.iter().enumerate() {
            if lo >= hi || hi > n {
                return Err(Error::Precondition {
                    op: "segment_max",
                    msg: format!("empty or out-of-range segment {lo}..{hi} (rows {n})"),
                });
            }
            for j in 0..c {
                let mut best = xv[lo * c + j];
                let mut best_row = lo;
                let mut second = f64::NEG_INFINITY;
                for r in lo + 1..hi {
                    let v = xv[r * c + j];
                    if v > best {
                        second = best;
                        best = v;
                        best_row = r;
                    } else if v > second {
                        second = v;
                    }
                }
                if second.is_finite() {
                    self.kink_margin = self.kink_margin.min(best - second);
                }
                out[s * c + j] = best;
                argmax[s * c + j] = best_row;
            }
        }
        let ng = self.ng(x);
        Ok(self.push([ns, c], out, Op::SegmentMax { x, argmax }, ng))
    }

    /// Per-column max over all rows: `[n,c] -> [1,c]` plus recorded argmax.
    pub fn reduce_max(&mut self, x: NodeId) -> Result<NodeId> {
        let [n, _] = self.shape(x);
        if n == 0 {
            return Err(Error::Precondition {
                op: "reduce_max",
                msg: "empty input".into(),
            });
        }
        self.segment_max(x, vec![(0, n)])
    }

    /// Argmax rows recorded by a `segment_max`/`reduce_max` node.
    pub fn argmax_of(&self, id: NodeId) -> Option<&[usize]> {
        match &self.nodes[id].op {
            Op::SegmentMax { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Stack the given rows of `x` (repeats allowed).
    pub fn gather(&mut self, x: NodeId, rows: Vec<usize>) -> NodeId {
        let [_, c] = self.shape(x);
        let xv = &self.nodes[x].values;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in &rows {
            out.extend_from_slice(&xv[r * c..(r + 1) * c]);
        }
        let ng = self.ng(x);
        self.push([rows.len(), c], out, Op::Gather { x, rows }, ng)
    }

    /// Concatenate along columns; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let n = self.shape(parts[0])[0];
        let mut c_total = 0;
        for &p in parts {
            let [pn, pc] = self.shape(p);
            if pn != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![n],
                    rhs: vec![pn],
                });
            }
            c_total += pc;
        }
        let mut out = Vec::with_capacity(n * c_total);
        for i in 0..n {
            for &p in parts {
                let [_, pc] = self.shape(p);
                let pv = &self.nodes[p].values;
                out.extend_from_slice(&pv[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push([n, c_total], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: NodeId, shape: [usize; 2]) -> Result<NodeId> {
        let s = self.shape(x);
        if s[0] * s[1] != shape[0] * shape[1] {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: s.to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = self.nodes[x].values.clone();
        let ng = self.ng(x);
        Ok(self.push(shape, v, Op::Reshape(x), ng))
    }

    /// Contiguous slice of the row-major flattening of `x`, reshaped.
    pub fn slice(&mut self, x: NodeId, start: usize, shape: [usize; 2]) -> Result<NodeId> {
        let s = self.shape(x);
        let len = shape[0] * shape[1];
        if start + len > s[0] * s[1] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: s.to_vec(),
                rhs: vec![start, len],
            });
        }
        let v = self.nodes[x].values[start..start + len].to_vec();
        let ng = self.ng(x);
        Ok(self.push(shape, v, Op::Slice { x, start }, ng))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].values.iter().sum();
        let ng = self.ng(x);
        self.push([1, 1], vec![s], Op::SumAll(x), ng)
    }

    /// Row sums: `[n,c] -> [n,1]`.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let [n, c] = self.shape(x);
        let out: Vec<f64> = self.nodes[x]
            .values
            .chunks(c)
            .map(|row| row.iter().sum())
            .collect();
        let ng = self.ng(x);
        self.push([n, 1], out, Op::SumRows(x), ng)
    }

    // ---- batch norm ----

    /// Batch normalization over rows. Train mode normalizes by the batch
    /// mean and population variance and records a running-stat update
    /// (applied later via [`BnStats::apply_updates`]); eval mode reads the
    /// running stats. Train mode needs at least 2 rows.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        bn_id: BnId,
        stats: &BnStats,
        mode: BnMode,
        eps: f64,
        momentum: f64,
    ) -> Result<NodeId> {
        let [n, c] = self.shape(x);
        if self.shape(scale) != [1, c] || self.shape(shift) != [1, c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![n, c],
                rhs: self.shape(scale).to_vec(),
            });
        }
        let (mean, var, train) = match mode {
            BnMode::Train => {
                if n < 2 {
                    return Err(Error::Precondition {
                        op: "batch_norm",
                        msg: format!("train mode needs n >= 2, got {n}"),
                    });
                }
                let xv = &self.nodes[x].values;
                let mut mean = vec![0.0; c];
                for row in xv.chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                let mut var = vec![0.0; c];
                for row in xv.chunks(c) {
                    for j in 0..c {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= n as f64;
                }
                self.bn_updates.push(BnUpdate {
                    id: bn_id,
                    mean: mean.clone(),
                    var: var.clone(),
                    momentum,
                });
                (mean, var, true)
            }
            BnMode::Eval => (stats.mean[bn_id].clone(), stats.var[bn_id].clone(), false),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xv = &self.nodes[x].values;
        let sc = &self.nodes[scale].values;
        let sh = &self.nodes[shift].values;
        let mut xhat = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        for (i, row) in xv.chunks(c).enumerate() {
            for j in 0..c {
                let xh = (row[j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * sc[j] + sh[j];
            }
        }
        let ng = self.ng(x) || self.ng(scale) || self.ng(shift);
        Ok(self.push(
            [n, c],
            out,
            Op::BatchNorm {
                x,
                scale,
                shift,
                cache: BnCache {
                    inv_std,
                    xhat,
                    train,
                },
            },
            ng,
        ))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Returns per-node gradients;
    /// use [`Gradients::param_grads`] for the per-parameter map (unreached
    /// parameters get zeros).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss].values.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        let prof = std::env::var_os("METAREG_PROF").is_some();
        let mut prof_times: std::collections::BTreeMap<&'static str, f64> = Default::default();
        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let t0 = prof.then(std::time::Instant::now);
            self.accumulate(id, &dy, &mut grads);
            if let Some(t0) = t0 {
                *prof_times.entry(self.nodes[id].op.name()).or_default() += t0.elapsed().as_secs_f64();
            }
            // Re-store for param leaves so they survive the sweep.
            if matches!(self.nodes[id].op, Op::Param(_)) {
                grads[id] = Some(dy);
            }
        }
        if prof {
            for (name, t) in &prof_times {
                eprintln!("  bwd {name}: {:.2} ms", t * 1e3);
            }
        }
        Ok(Gradients { grads })
    }

    fn acc_into(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
        let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn accumulate(&self, id: NodeId, dy: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[id];
        let val_len = |n: NodeId| self.nodes[n].values.len();
        match &node.op {
            Op::Const | Op::Param(_) => {}
            Op::Matmul(a, b) => {
                let [n, m] = node.shape;
                let k = self.shape(*a)[1];
                if self.ng(*a) {
                    let bv = &self.nodes[*b].values;
                    Self::acc_into(grads, *a, n * k, |ga| {
                        kernels::mm_nt_acc(dy, bv, ga, n, m, k);
                    });
                }
                if self.ng(*b) {
                    let av = &self.nodes[*a].values;
                    Self::acc_into(grads, *b, k * m, |gb| {
                        kernels::mm_tn_acc(av, dy, gb, n, k, m);
                    });
                }
            }
            Op::Add(a, b) => {
                for &t in [a, b].iter() {
                    if self.ng(*t) {
                        Self::acc_into(grads, *t, dy.len(), |g| {
                            for (gi, di) in g.iter_mut().zip(dy) {
                                *gi += di;
                            }
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    Self::acc_into(grads, *a, dy.len(), |g| {
                        for (gi, di) in g.iter_mut().zip(dy) {
                            *gi += di;
                        }
                    });
                }
                if self.ng(*b) {
                    Self::acc_into(grads, *b, dy.len(), |g| {
                        for (gi, di) in g.iter_mut().zip(dy) {
                            *gi -= di;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = &self.nodes[*b].values;
                    Self::acc_into(grads, *a, dy.len(), |g| {
                        for i in 0..dy.len() {
                            g[i] += dy[i] * bv[i];
                        }
                    });
                }
                if self.ng(*b) {
                    let av = &self.nodes[*a].values;
                    Self::acc_into(grads, *b, dy.len(), |g| {
                        for i in 0..dy.len() {
                            g[i] += dy[i] * av[i];
                        }
                    });
                }
            }
            Op::AddBias(a, bias) => {
                let [n, c] = node.shape;
                if self.ng(*a) {
                    Self::acc_into(grads, *a, dy.len(), |g| {
                        for (gi, di) in g.iter_mut().zip(dy) {
                            *gi += di;
                        }
                    });
                }
                if self.ng(*bias) {
                    Self::acc_into(grads, *bias, c, |g| {
                        for i in 0..n {
                            for j in 0..c {
                                g[j] += dy[i * c + j];
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = &self.nodes[*x].values;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        if xv[i] > 0.0 {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let yv = &node.values;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        g[i] += dy[i] * yv[i];
                    }
                });
            }
            Op::Log(x) => {
                let xv = &self.nodes[*x].values;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        g[i] += dy[i] / xv[i];
                    }
                });
            }
            Op::Square(x) => {
                let xv = &self.nodes[*x].values;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        g[i] += dy[i] * 2.0 * xv[i];
                    }
                });
            }
            Op::Sqrt(x) => {
                let yv = &node.values;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        if yv[i] > 0.0 {
                            g[i] += dy[i] * 0.5 / yv[i];
                        }
                    }
                });
            }
            Op::Abs(x) => {
                let xv = &self.nodes[*x].values;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        g[i] += dy[i] * if xv[i] > 0.0 { 1.0 } else if xv[i] < 0.0 { -1.0 } else { 0.0 };
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        g[i] += dy[i] * s;
                    }
                });
            }
            Op::AddConst(x) => {
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
            }
            Op::SegmentMax { x, argmax, .. } => {
                let c = node.shape[1];
                Self::acc_into(grads, *x, val_len(*x), |g| {
                    for (k, &row) in argmax.iter().enumerate() {
                        let j = k % c;
                        g[row * c + j] += dy[k];
                    }
                });
            }
            Op::Gather { x, rows } => {
                let c = node.shape[1];
                Self::acc_into(grads, *x, val_len(*x), |g| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            g[r * c + j] += dy[i * c + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.shape[0];
                let c_total = node.shape[1];
                let mut col = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.ng(p) {
                        Self::acc_into(grads, p, n * pc, |g| {
                            for i in 0..n {
                                for j in 0..pc {
                                    g[i * pc + j] += dy[i * c_total + col + j];
                                }
                            }
                        });
                    }
                    col += pc;
                }
            }
            Op::Reshape(x) => {
                Self::acc_into(grads, *x, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
            }
            Op::Slice { x, start } => {
                let start = *start;
                Self::acc_into(grads, *x, val_len(*x), |g| {
                    for (i, di) in dy.iter().enumerate() {
                        g[start + i] += di;
                    }
                });
            }
            Op::SumAll(x) => {
                let d = dy[0];
                Self::acc_into(grads, *x, val_len(*x), |g| {
                    for gi in g.iter_mut() {
                        *gi += d;
                    }
                });
            }
            Op::SumRows(x) => {
                let c = self.shape(*x)[1];
                Self::acc_into(grads, *x, val_len(*x), |g| {
                    for (i, row) in g.chunks_mut(c).enumerate() {
                        for gj in row.iter_mut() {
                            *gj += dy[i];
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                cache,
            } => {
                let [n, c] = node.shape;
                let sc = &self.nodes[*scale].values;
                let xhat = &cache.xhat;
                // one pass serves the shift grad, the scale grad, and the
                // centering terms of the x grad
                let mut sum_dy = vec![0.0; c];
                let mut sum_dyxh = vec![0.0; c];
                for i in 0..n {
                    for j in 0..c {
                        sum_dy[j] += dy[i * c + j];
                        sum_dyxh[j] += dy[i * c + j] * xhat[i * c + j];
                    }
                }
                if self.ng(*shift) {
                    Self::acc_into(grads, *shift, c, |g| {
                        for j in 0..c {
                            g[j] += sum_dy[j];
                        }
                    });
                }
                if self.ng(*scale) {
                    Self::acc_into(grads, *scale, c, |g| {
                        for j in 0..c {
                            g[j] += sum_dyxh[j];
                        }
                    });
                }
                if self.ng(*x) {
                    let inv_std = &cache.inv_std;
                    if cache.train {
                        // d_x = scale * inv_std / n * (n*dy - sum(dy) - xhat * sum(dy*xhat))
                        let nf = n as f64;
                        Self::acc_into(grads, *x, n * c, |g| {
                            for i in 0..n {
                                for j in 0..c {
                                    let t = nf * dy[i * c + j]
                                        - sum_dy[j]
                                        - xhat[i * c + j] * sum_dyxh[j];
                                    g[i * c + j] += sc[j] * inv_std[j] / nf * t;
                                }
                            }
                        });
                    } else {
                        Self::acc_into(grads, *x, n * c, |g| {
                            for i in 0..n {
                                for j in 0..c {
                                    g[i * c + j] += dy[i * c + j] * sc[j] * inv_std[j];
                                }
                            }
                        });
                    }
                }
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn node_grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients aligned with the store; zero for parameters
    /// the loss does not reach.
    pub fn param_grads(&self, graph: &Graph, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..store.len())
            .map(|id| vec![0.0; store.value(id).len()])
            .collect();
        for (nid, node) in graph.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = self.node_grad(nid) {
                    let slot = &mut out[pid];
                    for (s, gi) in slot.iter_mut().zip(g) {
                        *s += gi;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
