//! Gradient verification against central finite differences.
//!
//! Inputs are resampled when a forward pass lands within 1e-3 of a ReLU
//! kink, a max-pool tie or a sqrt at zero, where the derivative is not
//! defined by a limit.

use rand::Rng;

use super::{BnMode, BnStats, Graph, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::rng;

/// Pass threshold on the relative error.
pub const TOL: f64 = 1e-4;
/// Central-difference step.
pub const FD_H: f64 = 1e-5;
/// Minimum distance from non-differentiable points.
pub const KINK_MARGIN: f64 = 1e-3;
/// Coordinates probed per parameter tensor.
const COORDS_PER_PARAM: usize = 6;

#[derive(Debug, Clone)]
pub struct OpReport {
    pub name: String,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < TOL
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Compare autodiff gradients of `build`'s scalar loss against central
/// finite differences over sampled parameter coordinates. Returns the max
/// relative error, or `None` when the forward pass is too close to a kink
/// and the caller should resample.
pub fn check_fn<F>(store: &mut ParamStore, build: &F, seed: u64) -> Result<Option<f64>>
where
    F: Fn(&ParamStore) -> Result<(Graph, NodeId)>,
{
    let (graph, loss) = build(store)?;
    if graph.kink_margin < KINK_MARGIN {
        return Ok(None);
    }
    let grads = graph.backward(loss)?.param_grads(&graph, store);

    let mut rng = rng::rng_from(rng::derive(seed, &[0xfd]));
    let mut max_err: f64 = 0.0;
    for pid in 0..store.len() {
        let len = store.value(pid).len();
        let coords: Vec<usize> = if len <= COORDS_PER_PARAM {
            (0..len).collect()
        } else {
            (0..COORDS_PER_PARAM).map(|_| rng.gen_range(0..len)).collect()
        };
        for i in coords {
            let orig = store.value(pid)[i];
            store.value_mut(pid)[i] = orig + FD_H;
            let (gp, lp) = build(store)?;
            let fp = gp.scalar(lp);
            store.value_mut(pid)[i] = orig - FD_H;
            let (gm, lm) = build(store)?;
            let fm = gm.scalar(lm);
            store.value_mut(pid)[i] = orig;
            if gp.kink_margin < KINK_MARGIN / 2.0 || gm.kink_margin < KINK_MARGIN / 2.0 {
                return Ok(None);
            }
            let fd = (fp - fm) / (2.0 * FD_H);
            max_err = max_err.max(rel_err(grads[pid][i], fd));
        }
    }
    Ok(Some(max_err))
}

/// Retry `check_fn` with fresh input seeds until a kink-free sample is found.
pub fn check_resampling<B, F>(make: &B, seed: u64) -> Result<f64>
where
    B: Fn(u64) -> (ParamStore, F),
    F: Fn(&ParamStore) -> Result<(Graph, NodeId)>,
{
    for attempt in 0..32u64 {
        let (mut store, build) = make(rng::derive(seed, &[attempt]));
        if let Some(err) = check_fn(&mut store, &build, seed)? {
            return Ok(err);
        }
    }
    Err(Error::Precondition {
        op: "gradcheck",
        msg: "could not sample away from non-differentiable points".into(),
    })
}

fn rand_param(store: &mut ParamStore, name: &str, shape: [usize; 2], rng: &mut impl Rng) {
    let vals: Vec<f64> = (0..shape[0] * shape[1])
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    store.add(name, shape, vals);
}

/// Per-op gradient suite: one report per differentiable op kind.
pub fn run_basic_suite(seed: u64) -> Result<Vec<OpReport>> {
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| {
        out.push(OpReport {
            name: name.to_string(),
            max_rel_err: err,
        })
    };

    // matmul: loss = sum(A * B)
    let err = check_resampling(
        &|s| {
            let mut store = ParamStore::new();
            let mut r = rng::rng_from(s);
            rand_param(&mut store, "a", [4, 3], &mut r);
            rand_param(&mut store, "b", [3, 5], &mut r);
            (store, move |st: &ParamStore| {
                let mut g = Graph::new();
                let a = g.param(st, 0);
                let b = g.param(st, 1);
                let c = g.matmul(a, b)?;
                let l = g.sum_all(c);
                Ok((g, l))
            })
        },
        seed,
    )?;
    push("matmul", err);

    // elementwise binary add/sub/mul and bias broadcast
    for (idx, name) in ["add", "sub", "mul", "add_bias"].iter().enumerate() {
        let err = check_resampling(
            &|s| {
                let mut store = ParamStore::new();
                let mut r = rng::rng_from(s);
                rand_param(&mut store, "x", [3, 4], &mut r);
                let bshape = if idx == 3 { [1, 4] } else { [3, 4] };
                rand_param(&mut store, "y", bshape, &mut r);
                (store, move |st: &ParamStore| {
                    let mut g = Graph::new();
                    let x = g.param(st, 0);
                    let y = g.param(st, 1);
                    let z = match idx {
                        0 => g.add(x, y)?,
                        1 => g.sub(x, y)?,
                        2 => g.mul(x, y)?,
                        _ => g.add_bias(x, y)?,
                    };
                    let z2 = g.square(z);
                    let l = g.sum_all(z2);
                    Ok((g, l))
                })
            },
            rng::derive(seed, &[idx as u64 + 1]),
        )?;
        push(name, err);
    }

    // unary: relu, exp, log, square, sqrt, abs
    for (idx, name) in ["relu", "exp", "log", "square", "sqrt", "abs"]
        .iter()
        .enumerate()
    {
        let err = check_resampling(
            &|s| {
                let mut store = ParamStore::new();
                let mut r = rng::rng_from(s);
                let positive = idx == 2 || idx == 4; // log, sqrt need > 0
                let vals: Vec<f64> = (0..12)
                    .map(|_| {
                        if positive {
                            r.gen_range(0.2..2.0)
                        } else {
                            r.gen_range(-1.0..1.0)
                        }
                    })
                    .collect();
                store.add("x", [3, 4], vals);
                (store, move |st: &ParamStore| {
                    let mut g = Graph::new();
                    let x = g.param(st, 0);
                    let y = match idx {
                        0 => g.relu(x),
                        1 => g.exp(x),
                        2 => g.log(x)?,
                        3 => g.square(x),
                        4 => g.sqrt(x)?,
                        _ => g.abs(x),
                    };
                    let l = g.sum_all(y);
                    Ok((g, l))
                })
            },
            rng::derive(seed, &[idx as u64 + 10]),
        )?;
        push(name, err);
    }

    // reduce_max / segment_max
    let err = check_resampling(
        &|s| {
            let mut store = ParamStore::new();
            let mut r = rng::rng_from(s);
            rand_param(&mut store, "x", [6, 3], &mut r);
            (store, move |st: &ParamStore| {
                let mut g = Graph::new();
                let x = g.param(st, 0);
                let m = g.segment_max(x, vec![(0, 4), (4, 6)])?;
                let l = g.sum_all(m);
                Ok((g, l))
            })
        },
        rng::derive(seed, &[20]),
    )?;
    push("reduce_max", err);

    // gather + concat_cols + slice + sum_rows pipeline
    let err = check_resampling(
        &|s| {
            let mut store = ParamStore::new();
            let mut r = rng::rng_from(s);
            rand_param(&mut store, "x", [4, 3], &mut r);
            rand_param(&mut store, "y", [4, 2], &mut r);
            (store, move |st: &ParamStore| {
                let mut g = Graph::new();
                let x = g.param(st, 0);
                let y = g.param(st, 1);
                let gx = g.gather(x, vec![0, 2, 2, 3]);
                let cat = g.concat_cols(&[gx, y])?;
                let sl = g.slice(cat, 2, [3, 5])?;
                let sr = g.sum_rows(sl);
                let sq = g.square(sr);
                let l = g.sum_all(sq);
                Ok((g, l))
            })
        },
        rng::derive(seed, &[21]),
    )?;
    push("gather_concat_slice", err);

    // batch_norm, train and eval modes
    for (train, name) in [(true, "batch_norm_train"), (false, "batch_norm_eval")] {
        let err = check_resampling(
            &|s| {
                let mut store = ParamStore::new();
                let mut r = rng::rng_from(s);
                rand_param(&mut store, "x", [5, 3], &mut r);
                rand_param(&mut store, "scale", [1, 3], &mut r);
                rand_param(&mut store, "shift", [1, 3], &mut r);
                (store, move |st: &ParamStore| {
                    let mut g = Graph::new();
                    let mut stats = BnStats::new();
                    let bid = stats.add("bn", 3);
                    // nontrivial running stats for eval mode
                    stats.mean[bid] = vec![0.1, -0.2, 0.3];
                    stats.var[bid] = vec![0.9, 1.1, 0.5];
                    let x = g.param(st, 0);
                    let sc = g.param(st, 1);
                    let sh = g.param(st, 2);
                    let mode = if train { BnMode::Train } else { BnMode::Eval };
                    let y = g.batch_norm(x, sc, sh, bid, &stats, mode, 1e-5, 0.1)?;
                    let y2 = g.square(y);
                    let l = g.sum_all(y2);
                    Ok((g, l))
                })
            },
            rng::derive(seed, &[if train { 22 } else { 23 }]),
        )?;
        push(name, err);
    }

    // composed MLP: matmul -> bias -> bn -> relu -> matmul -> sum of squares
    let err = check_resampling(
        &|s| {
            let mut store = ParamStore::new();
            let mut r = rng::rng_from(s);
            rand_param(&mut store, "x", [6, 3], &mut r);
            rand_param(&mut store, "w1", [3, 4], &mut r);
            rand_param(&mut store, "b1", [1, 4], &mut r);
            rand_param(&mut store, "scale", [1, 4], &mut r);
            rand_param(&mut store, "shift", [1, 4], &mut r);
            rand_param(&mut store, "w2", [4, 2], &mut r);
            (store, move |st: &ParamStore| {
                let mut g = Graph::new();
                let mut stats = BnStats::new();
                let bid = stats.add("bn", 4);
                let x = g.param(st, 0);
                let w1 = g.param(st, 1);
                let b1 = g.param(st, 2);
                let sc = g.param(st, 3);
                let sh = g.param(st, 4);
                let w2 = g.param(st, 5);
                let h = g.matmul(x, w1)?;
                let h = g.add_bias(h, b1)?;
                let h = g.batch_norm(h, sc, sh, bid, &stats, BnMode::Train, 1e-5, 0.1)?;
                let h = g.relu(h);
                let o = g.matmul(h, w2)?;
                let o2 = g.square(o);
                let l = g.sum_all(o2);
                Ok((g, l))
            })
        },
        rng::derive(seed, &[24]),
    )?;
    push("mlp_stack", err);

    Ok(out)
}
