//! Shared per-point MLP machinery: layer specs, parameter registration,
//! initialization, and graph-building forwards.
//!
//! Every hidden layer is Linear -> BatchNorm -> ReLU; the last layer of each
//! stack is a plain linear map (no normalization or activation on output
//! layers). Stacks that see single-row inputs (the hypernetwork) skip BN.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BnId, BnMode, BnStats, Graph, NodeId, ParamId, ParamStore};

/// One linear layer plus optional BN/ReLU epilogue.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub bn: bool,
    pub relu: bool,
}

/// A named MLP stack; owns the parameter naming scheme
/// `{prefix}/l{i}/{w,b,bn_scale,bn_shift}`.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub prefix: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Glorot-uniform weights, zero biases.
    Glorot,
    /// All zeros; used for the hypernetwork output layer so theta2 starts
    /// at exactly zero.
    Zero,
}

impl MlpSpec {
    /// `dims = [in, h1, ..., out]`. Hidden layers get BN+ReLU (when
    /// `use_bn`), the final layer is plain linear.
    pub fn new(prefix: &str, dims: &[usize], use_bn: bool) -> Self {
        assert!(dims.len() >= 2, "{prefix}: need at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let last = i == dims.len() - 2;
                LayerSpec {
                    in_dim: w[0],
                    out_dim: w[1],
                    bn: use_bn && !last,
                    relu: !last,
                }
            })
            .collect();
        MlpSpec {
            prefix: prefix.to_string(),
            layers,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}/l{}/w", self.prefix, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}/l{}/b", self.prefix, layer)
    }

    /// Register parameters (and BN buffers) into the stores.
    pub fn register(
        &self,
        store: &mut ParamStore,
        bn: &mut BnStats,
        rng: &mut ChaCha8Rng,
        last_layer_init: InitKind,
    ) {
        for (i, l) in self.layers.iter().enumerate() {
            let last = i == self.layers.len() - 1;
            let kind = if last { last_layer_init } else { InitKind::Glorot };
            let w = match kind {
                InitKind::Glorot => {
                    let limit = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
                    (0..l.in_dim * l.out_dim)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect()
                }
                InitKind::Zero => vec![0.0; l.in_dim * l.out_dim],
            };
            store.add(&self.weight_name(i), [l.in_dim, l.out_dim], w);
            store.add(&self.bias_name(i), [1, l.out_dim], vec![0.0; l.out_dim]);
            if l.bn {
                store.add(
                    &format!("{}/l{}/bn_scale", self.prefix, i),
                    [1, l.out_dim],
                    vec![1.0; l.out_dim],
                );
                store.add(
                    &format!("{}/l{}/bn_shift", self.prefix, i),
                    [1, l.out_dim],
                    vec![0.0; l.out_dim],
                );
                bn.add(&format!("{}/l{}", self.prefix, i), l.out_dim);
            }
        }
    }

    /// Parameter ids (w, b, and BN pieces) resolved against a store.
    pub fn bind(&self, store: &ParamStore, bn: &BnStats) -> Result<Vec<LayerBinding>> {
        let lookup = |name: &str| -> Result<ParamId> {
            store.id(name).ok_or_else(|| Error::Structural {
                layer: name.to_string(),
                msg: "parameter missing from store".into(),
            })
        };
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(LayerBinding {
                    w: lookup(&self.weight_name(i))?,
                    b: lookup(&self.bias_name(i))?,
                    bn: if l.bn {
                        let scale = lookup(&format!("{}/l{}/bn_scale", self.prefix, i))?;
                        let shift = lookup(&format!("{}/l{}/bn_shift", self.prefix, i))?;
                        let stats = bn.id(&format!("{}/l{}", self.prefix, i)).ok_or_else(|| {
                            Error::Structural {
                                layer: format!("{}/l{}", self.prefix, i),
                                msg: "BN buffer missing".into(),
                            }
                        })?;
                        Some((scale, shift, stats))
                    } else {
                        None
                    },
                    relu: l.relu,
                })
            })
            .collect()
    }
}

/// Store-resolved parameter ids for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerBinding {
    pub w: ParamId,
    pub b: ParamId,
    pub bn: Option<(ParamId, ParamId, BnId)>,
    pub relu: bool,
}

/// Graph nodes for one layer's effective weights. `w`/`b` may be composed
/// (theta1 + theta2); BN parameters always come straight from theta1.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub w: NodeId,
    pub b: NodeId,
    pub bn: Option<(NodeId, NodeId, BnId)>,
    pub relu: bool,
}

/// Lift base (theta1-only) weights into graph nodes.
pub fn base_layer_nodes(
    g: &mut Graph,
    store: &ParamStore,
    bindings: &[LayerBinding],
) -> Vec<LayerNodes> {
    bindings
        .iter()
        .map(|l| LayerNodes {
            w: g.param(store, l.w),
            b: g.param(store, l.b),
            bn: l
                .bn
                .map(|(sc, sh, id)| (g.param(store, sc), g.param(store, sh), id)),
            relu: l.relu,
        })
        .collect()
}

/// Hyperparameters for BN evaluation inside a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BnContext<'a> {
    pub stats: &'a BnStats,
    pub train: bool,
    pub eps: f64,
    pub momentum: f64,
}

/// Apply the stack to `x` (`[rows, in_dim]`).
pub fn mlp_forward(
    g: &mut Graph,
    x: NodeId,
    layers: &[LayerNodes],
    bn: &BnContext,
    name: &str,
) -> Result<NodeId> {
    let expect = g.shape(layers[0].w)[0];
    let got = g.shape(x)[1];
    if got != expect {
        return Err(Error::Structural {
            layer: name.to_string(),
            msg: format!("input width {got}, layer expects {expect}"),
        });
    }
    let mut h = x;
    for l in layers {
        h = g.matmul(h, l.w)?;
        h = g.add_bias(h, l.b)?;
        if let Some((scale, shift, id)) = l.bn {
            let mode = if bn.train { BnMode::Train } else { BnMode::Eval };
            h = g.batch_norm(h, scale, shift, id, bn.stats, mode, bn.eps, bn.momentum)?;
        }
        if l.relu {
            h = g.relu(h);
        }
    }
    Ok(h)
}
