//! The registration learner: three set-convolution stages (g1, g2, g3)
//! regressing a per-point flow field. Effective MLP weights are the
//! element-wise sum of trained base weights theta1 and per-task predicted
//! deltas theta2 (BN parameters are theta1-only).

use crate::error::{Error, Result};
use crate::kdtree;
use crate::nn::{base_layer_nodes, mlp_forward, BnContext, LayerBinding, LayerNodes, MlpSpec};
use crate::nn::InitKind;
use crate::rng;
use crate::tensor::{BnStats, Graph, NodeId, ParamStore};
use rand_chacha::ChaCha8Rng;

/// Flat theta2 layout: one entry per predicted weight matrix / bias, in a
/// fixed order (g1 layers in depth order, weight before bias, then g2,
/// then g3; row-major within each matrix).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Theta2Entry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Theta2Layout {
    pub entries: Vec<Theta2Entry>,
    pub total: usize,
}

impl Theta2Layout {
    /// Split a flat vector into named banks. Inverse of [`flatten`].
    pub fn partition(&self, flat: &[f64]) -> Result<Vec<(String, Vec<f64>)>> {
        if flat.len() != self.total {
            return Err(Error::Structural {
                layer: "theta2".into(),
                msg: format!("flat width {} != layout total {}", flat.len(), self.total),
            });
        }
        Ok(self
            .entries
            .iter()
            .map(|e| {
                let n = e.rows * e.cols;
                (e.name.clone(), flat[e.offset..e.offset + n].to_vec())
            })
            .collect())
    }

    /// Concatenate named banks back into the flat vector.
    pub fn flatten(&self, banks: &[(String, Vec<f64>)]) -> Result<Vec<f64>> {
        let mut flat = vec![0.0; self.total];
        if banks.len() != self.entries.len() {
            return Err(Error::Structural {
                layer: "theta2".into(),
                msg: format!("{} banks for {} entries", banks.len(), self.entries.len()),
            });
        }
        for (e, (name, vals)) in self.entries.iter().zip(banks) {
            if name != &e.name || vals.len() != e.rows * e.cols {
                return Err(Error::Structural {
                    layer: e.name.clone(),
                    msg: "bank name or size mismatch".into(),
                });
            }
            flat[e.offset..e.offset + vals.len()].copy_from_slice(vals);
        }
        Ok(flat)
    }
}

/// Neighbor index lists for one (source, target) pair; static for a fixed
/// pair, so the trainer caches them per task.
#[derive(Debug, Clone)]
pub struct PairNeighbors {
    /// Within-source neighbors at radius r1 (for descriptor_conv on S).
    pub src: Vec<Vec<usize>>,
    /// Within-target neighbors at radius r1 (for descriptor_conv on G).
    pub tgt: Vec<Vec<usize>>,
    /// Source-to-target neighbors at radius r2 (for relation_conv).
    pub rel: Vec<Vec<usize>>,
}

/// Radius-query every point of `query` against an index over `base`.
pub fn cross_neighbors(
    query: &[[f64; 3]],
    base: &[[f64; 3]],
    radius: f64,
    cap: usize,
) -> Result<Vec<Vec<usize>>> {
    let index = kdtree::build_index_points(base)?;
    query
        .iter()
        .map(|q| index.radius_neighbors(*q, radius, cap))
        .collect()
}

pub fn pair_neighbors(
    src: &[[f64; 3]],
    tgt: &[[f64; 3]],
    r1: f64,
    r2: f64,
    cap: usize,
) -> Result<PairNeighbors> {
    Ok(PairNeighbors {
        src: cross_neighbors(src, src, r1, cap)?,
        tgt: cross_neighbors(tgt, tgt, r1, cap)?,
        rel: cross_neighbors(src, tgt, r2, cap)?,
    })
}

fn flatten_nbrs(nbrs: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>, Vec<(usize, usize)>) {
    let mut rep = Vec::new();
    let mut idx = Vec::new();
    let mut segments = Vec::with_capacity(nbrs.len());
    for (i, ns) in nbrs.iter().enumerate() {
        let lo = idx.len();
        for &j in ns {
            rep.push(i);
            idx.push(j);
        }
        segments.push((lo, idx.len()));
    }
    (rep, idx, segments)
}

/// Shape descriptor (set conv 1): per point, apply g1 to each neighbor
/// coordinate and channel-wise max-pool. Returns the descriptor matrix
/// `[n, c]` and the concatenation `[x, l_x]` of shape `[n, c+3]`.
pub fn descriptor_conv(
    g: &mut Graph,
    coords: NodeId,
    nbrs: &[Vec<usize>],
    layers: &[LayerNodes],
    bn: &BnContext,
) -> Result<(NodeId, NodeId)> {
    let (_, idx, segments) = flatten_nbrs(nbrs);
    let rows = g.gather(coords, idx);
    let feat = mlp_forward(g, rows, layers, bn, "g1")?;
    let desc = g.segment_max(feat, segments)?;
    let cat = g.concat_cols(&[coords, desc])?;
    Ok((desc, cat))
}

/// Relation conv (set conv 2): for each source point, g2 over the
/// concatenated relation vectors `[x, l_x, y, l_y, x - y]` of its target
/// neighbors, max-pooled per channel. Output `[n_src, c+3]`.
pub fn relation_conv(
    g: &mut Graph,
    src: NodeId,
    src_desc: NodeId,
    tgt: NodeId,
    tgt_desc: NodeId,
    nbrs: &[Vec<usize>],
    layers: &[LayerNodes],
    bn: &BnContext,
) -> Result<NodeId> {
    let (rep, idx, segments) = flatten_nbrs(nbrs);
    let xs = g.gather(src, rep.clone());
    let lxs = g.gather(src_desc, rep);
    let ys = g.gather(tgt, idx.clone());
    let lys = g.gather(tgt_desc, idx);
    let diff = g.sub(xs, ys)?;
    let rows = g.concat_cols(&[xs, lxs, ys, lys, diff])?;
    let feat = mlp_forward(g, rows, layers, bn, "g2")?;
    g.segment_max(feat, segments)
}

/// Flow regression: g3 on `[x, p_x]`, plain linear output. `[n, 3]`.
pub fn flow_regress(
    g: &mut Graph,
    src: NodeId,
    relation: NodeId,
    layers: &[LayerNodes],
    bn: &BnContext,
) -> Result<NodeId> {
    let rows = g.concat_cols(&[src, relation])?;
    mlp_forward(g, rows, layers, bn, "g3")
}

/// The three-stage learner with its architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct Learner {
    pub g1: MlpSpec,
    pub g2: MlpSpec,
    pub g3: MlpSpec,
    pub c: usize,
    pub r1: f64,
    pub r2: f64,
    pub cap: usize,
}

/// Store-resolved bindings for the three stacks.
#[derive(Debug, Clone)]
pub struct LearnerBindings {
    pub g1: Vec<LayerBinding>,
    pub g2: Vec<LayerBinding>,
    pub g3: Vec<LayerBinding>,
}

/// Graph-level effective weights for one task (theta1 or theta1 + theta2).
#[derive(Debug, Clone)]
pub struct LearnerNodes {
    pub g1: Vec<LayerNodes>,
    pub g2: Vec<LayerNodes>,
    pub g3: Vec<LayerNodes>,
}

impl Learner {
    pub fn new(c: usize, r1: f64, r2: f64, cap: usize) -> Self {
        Learner {
            g1: MlpSpec::new("g1", &[3, 16, 16, c], true),
            g2: MlpSpec::new("g2", &[2 * c + 9, 64, c + 3], true),
            g3: MlpSpec::new("g3", &[c + 6, 32, 16, 3], true),
            c,
            r1,
            r2,
            cap,
        }
    }

    pub fn register_params(&self, store: &mut ParamStore, bn: &mut BnStats, rng: &mut ChaCha8Rng) {
        self.g1.register(store, bn, rng, InitKind::Glorot);
        self.g2.register(store, bn, rng, InitKind::Glorot);
        self.g3.register(store, bn, rng, InitKind::Glorot);
    }

    pub fn bind(&self, store: &ParamStore, bn: &BnStats) -> Result<LearnerBindings> {
        Ok(LearnerBindings {
            g1: self.g1.bind(store, bn)?,
            g2: self.g2.bind(store, bn)?,
            g3: self.g3.bind(store, bn)?,
        })
    }

    /// The flat theta2 layout covering every g1/g2/g3 weight and bias.
    pub fn theta2_layout(&self) -> Theta2Layout {
        let mut entries = Vec::new();
        let mut offset = 0;
        for spec in [&self.g1, &self.g2, &self.g3] {
            for (i, l) in spec.layers.iter().enumerate() {
                for (suffix, rows, cols) in
                    [("w", l.in_dim, l.out_dim), ("b", 1usize, l.out_dim)]
                {
                    entries.push(Theta2Entry {
                        name: format!("{}/l{}/{}", spec.prefix, i, suffix),
                        offset,
                        rows,
                        cols,
                    });
                    offset += rows * cols;
                }
            }
        }
        Theta2Layout {
            entries,
            total: offset,
        }
    }

    /// Lift weights into graph nodes, composing with slices of `theta2_flat`
    /// (a `[1, total]` node) when present. With `None` the result is the
    /// theta1-only base network.
    pub fn layer_nodes(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bindings: &LearnerBindings,
        theta2_flat: Option<NodeId>,
    ) -> Result<LearnerNodes> {
        let base = |g: &mut Graph, b: &[LayerBinding]| base_layer_nodes(g, store, b);
        let Some(flat) = theta2_flat else {
            return Ok(LearnerNodes {
                g1: base(g, &bindings.g1),
                g2: base(g, &bindings.g2),
                g3: base(g, &bindings.g3),
            });
        };
        let layout = self.theta2_layout();
        if g.shape(flat) != [1, layout.total] {
            return Err(Error::Structural {
                layer: "theta2".into(),
                msg: format!(
                    "flat shape {:?}, layout needs [1, {}]",
                    g.shape(flat),
                    layout.total
                ),
            });
        }
        let mut cursor = layout.entries.iter();
        let mut compose = |g: &mut Graph, b: &[LayerBinding]| -> Result<Vec<LayerNodes>> {
            b.iter()
                .map(|l| {
                    let ew = cursor.next().expect("layout shorter than bindings");
                    let eb = cursor.next().expect("layout shorter than bindings");
                    let w1 = g.param(store, l.w);
                    let b1 = g.param(store, l.b);
                    let ws = g.slice(flat, ew.offset, [1, ew.rows * ew.cols])?;
                    let ws = g.reshape(ws, [ew.rows, ew.cols])?;
                    let bs = g.slice(flat, eb.offset, [1, eb.cols])?;
                    Ok(LayerNodes {
                        w: g.add(w1, ws)?,
                        b: g.add(b1, bs)?,
                        bn: l
                            .bn
                            .map(|(sc, sh, id)| (g.param(store, sc), g.param(store, sh), id)),
                        relu: l.relu,
                    })
                })
                .collect()
        };
        Ok(LearnerNodes {
            g1: compose(g, &bindings.g1)?,
            g2: compose(g, &bindings.g2)?,
            g3: compose(g, &bindings.g3)?,
        })
    }

    /// Full registration pass: descriptors on both clouds, relation conv,
    /// flow regression. Returns `(flow, transformed_source)`.
    pub fn register_pass(
        &self,
        g: &mut Graph,
        nodes: &LearnerNodes,
        src: NodeId,
        tgt: NodeId,
        nbrs: &PairNeighbors,
        bn: &BnContext,
    ) -> Result<(NodeId, NodeId)> {
        let (flow, moved, _) = self.register_pass_parts(g, nodes, src, tgt, None, nbrs, bn)?;
        Ok((flow, moved))
    }

    /// Like [`register_pass`](Self::register_pass) but optionally accepts a
    /// precomputed target descriptor (the cycle pass registers back onto the
    /// original source, whose descriptor the main pass already built) and
    /// additionally returns the source descriptor for such reuse.
    pub fn register_pass_parts(
        &self,
        g: &mut Graph,
        nodes: &LearnerNodes,
        src: NodeId,
        tgt: NodeId,
        tgt_desc: Option<NodeId>,
        nbrs: &PairNeighbors,
        bn: &BnContext,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let (src_desc, _) = descriptor_conv(g, src, &nbrs.src, &nodes.g1, bn)?;
        let tgt_desc = match tgt_desc {
            Some(d) => d,
            None => descriptor_conv(g, tgt, &nbrs.tgt, &nodes.g1, bn)?.0,
        };
        let rel = relation_conv(g, src, src_desc, tgt, tgt_desc, &nbrs.rel, &nodes.g2, bn)?;
        let flow = flow_regress(g, src, rel, &nodes.g3, bn)?;
        let moved = g.add(src, flow)?;
        Ok((flow, moved, src_desc))
    }
}

/// Init a throwaway learner weight bank (used by tests and gradcheck).
pub fn init_for_test(learner: &Learner, seed: u64) -> (ParamStore, BnStats) {
    let mut store = ParamStore::new();
    let mut bn = BnStats::new();
    let mut r = rng::rng_from(rng::derive(seed, &[rng::tag::INIT]));
    learner.register_params(&mut store, &mut bn, &mut r);
    (store, bn)
}
