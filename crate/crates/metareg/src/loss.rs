//! Training losses (flow + cycle, Chamfer, KL) built on the autodiff graph,
//! and the plain evaluation metrics (EPE, ACC, per-point Chamfer).

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kdtree;
use crate::tensor::{Graph, NodeId};

/// Per-point norm used inside the flow loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowNorm {
    L2,
    L1,
}

impl FromStr for FlowNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(FlowNorm::L2),
            "l1" => Ok(FlowNorm::L1),
            other => Err(Error::Config(format!(
                "flow_norm must be \"l2\" or \"l1\", got {other:?}"
            ))),
        }
    }
}

/// All scalar terms of one task's loss, with the weights that combined them.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossBreakdown {
    pub flow_term: f64,
    pub cycle_term: f64,
    pub chamfer_s: f64,
    pub chamfer_g: f64,
    pub kl_s: f64,
    pub kl_g: f64,
    pub total: f64,
    pub lambda_cycle: f64,
    pub lambda_kl: f64,
    pub beta_recon: f64,
}

fn per_point_norm(g: &mut Graph, diff: NodeId, norm: FlowNorm) -> Result<NodeId> {
    match norm {
        FlowNorm::L2 => {
            let sq = g.square(diff);
            let rows = g.sum_rows(sq);
            g.sqrt(rows)
        }
        FlowNorm::L1 => {
            let a = g.abs(diff);
            Ok(g.sum_rows(a))
        }
    }
}

/// Supervised flow loss with cycle consistency:
/// `(1/n) * sum_masked { ||v - v*|| + lambda * ||v + v'|| }` where `n` is the
/// full source point count and `v'` is the flow predicted on `(S', S)`.
/// Returns `(flow_term, cycle_term)` as scalar nodes (cycle term unweighted).
pub fn flow_loss(
    g: &mut Graph,
    pred: NodeId,
    gt: NodeId,
    cycle_pred: NodeId,
    mask: &[bool],
    norm: FlowNorm,
) -> Result<(NodeId, NodeId)> {
    let n = g.shape(pred)[0];
    if g.shape(gt) != [n, 3] || g.shape(cycle_pred) != [n, 3] || mask.len() != n {
        return Err(Error::Usage(format!(
            "flow_loss: pred {:?}, gt {:?}, cycle {:?}, mask {}",
            g.shape(pred),
            g.shape(gt),
            g.shape(cycle_pred),
            mask.len()
        )));
    }
    let kept: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if kept.is_empty() {
        return Err(Error::Usage("flow_loss: empty mask".into()));
    }
    let pm = g.gather(pred, kept.clone());
    let gm = g.gather(gt, kept.clone());
    let cm = g.gather(cycle_pred, kept);
    let diff = g.sub(pm, gm)?;
    let dn = per_point_norm(g, diff, norm)?;
    let ds = g.sum_all(dn);
    let flow_term = g.scale(ds, 1.0 / n as f64);
    let csum = g.add(pm, cm)?;
    let cn = per_point_norm(g, csum, norm)?;
    let cs = g.sum_all(cn);
    let cycle_term = g.scale(cs, 1.0 / n as f64);
    Ok((flow_term, cycle_term))
}

fn nearest_indices(from: &[[f64; 3]], to: &[[f64; 3]]) -> Result<Vec<usize>> {
    let index = kdtree::build_index_points(to)?;
    Ok(from.iter().map(|p| index.nearest(*p).0).collect())
}

/// Symmetric squared-distance Chamfer between two coordinate nodes. The
/// nearest-neighbor assignment is computed from current values and held
/// fixed in the graph; gradients flow through the matched coordinates.
pub fn chamfer_graph(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    for (name, id) in [("a", a), ("b", b)] {
        let [n, c] = g.shape(id);
        if n == 0 || c != 3 {
            return Err(Error::Usage(format!(
                "chamfer: cloud {name} has shape {:?}",
                g.shape(id)
            )));
        }
    }
    let av = as_points(g.values(a));
    let bv = as_points(g.values(b));
    let a_to_b = nearest_indices(&av, &bv)?;
    let b_to_a = nearest_indices(&bv, &av)?;

    let bm = g.gather(b, a_to_b);
    let d1 = g.sub(a, bm)?;
    let s1 = g.square(d1);
    let t1 = g.sum_all(s1);

    let am = g.gather(a, b_to_a);
    let d2 = g.sub(b, am)?;
    let s2 = g.square(d2);
    let t2 = g.sum_all(s2);
    g.add(t1, t2)
}

/// KL(N(mu, sigma) || N(0, I)) in closed form from the log-sigma node:
/// `0.5 * sum(mu^2 + sigma^2 - 2*log_sigma - 1)`.
pub fn kl_graph(g: &mut Graph, mu: NodeId, log_sigma: NodeId) -> Result<NodeId> {
    let mu2 = g.square(mu);
    let two_ls = g.scale(log_sigma, 2.0);
    let sig2 = g.exp(two_ls);
    let lin = g.sub(mu2, two_ls)?;
    let both = g.add(lin, sig2)?;
    let shifted = g.add_const(both, -1.0);
    let s = g.sum_all(shifted);
    Ok(g.scale(s, 0.5))
}

/// Regularized reconstruction loss: `chamfer(rec, cloud) + lambda_kl * KL`.
pub fn recon_loss(
    g: &mut Graph,
    cloud: NodeId,
    reconstruction: NodeId,
    mu: NodeId,
    log_sigma: NodeId,
    lambda_kl: f64,
) -> Result<NodeId> {
    let ch = chamfer_graph(g, reconstruction, cloud)?;
    let kl = kl_graph(g, mu, log_sigma)?;
    let klw = g.scale(kl, lambda_kl);
    g.add(ch, klw)
}

// ---- plain (non-graph) metrics ----

pub(crate) fn as_points(flat: &[f64]) -> Vec<[f64; 3]> {
    flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn masked_errors(pred: &[[f64; 3]], gt: &[[f64; 3]], mask: &[bool]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::Usage(format!(
            "flow metric: lengths pred={}, gt={}, mask={}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let errs: Vec<f64> = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, t), _)| crate::cloud::dist2(*p, *t).sqrt())
        .collect();
    if errs.is_empty() {
        return Err(Error::Usage("flow metric: empty mask".into()));
    }
    Ok(errs)
}

/// Mean endpoint error over masked points.
pub fn epe(pred: &[[f64; 3]], gt: &[[f64; 3]], mask: &[bool]) -> Result<f64> {
    let errs = masked_errors(pred, gt, mask)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Fraction of masked points with endpoint error strictly below `threshold`.
pub fn acc(pred: &[[f64; 3]], gt: &[[f64; 3]], mask: &[bool], threshold: f64) -> Result<f64> {
    if threshold <= 0.0 {
        return Err(Error::Precondition {
            op: "acc",
            msg: format!("threshold must be > 0, got {threshold}"),
        });
    }
    let errs = masked_errors(pred, gt, mask)?;
    let hits = errs.iter().filter(|&&e| e < threshold).count();
    Ok(hits as f64 / errs.len() as f64)
}

/// Exact symmetric squared-distance Chamfer, kd-tree accelerated.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("chamfer: empty cloud".into()));
    }
    let ia = kdtree::build_index_points(a)?;
    let ib = kdtree::build_index_points(b)?;
    // recompute squared distances from the matched indices so the result is
    // bit-identical to the brute-force reference
    let fwd: f64 = a
        .iter()
        .map(|p| crate::cloud::dist2(*p, b[ib.nearest(*p).0]))
        .sum();
    let bwd: f64 = b
        .iter()
        .map(|q| crate::cloud::dist2(*q, a[ia.nearest(*q).0]))
        .sum();
    Ok(fwd + bwd)
}

/// O(n*m) reference for [`chamfer`]; must agree exactly.
pub fn brute_force_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("chamfer: empty cloud".into()));
    }
    let min_d2 = |p: [f64; 3], set: &[[f64; 3]]| {
        set.iter()
            .map(|q| crate::cloud::dist2(p, *q))
            .fold(f64::INFINITY, f64::min)
    };
    let fwd: f64 = a.iter().map(|p| min_d2(*p, b)).sum();
    let bwd: f64 = b.iter().map(|q| min_d2(*q, a)).sum();
    Ok(fwd + bwd)
}

/// Report-facing "C.D.": alignment chamfer normalized per point.
pub fn chamfer_metric(moved: &[[f64; 3]], target: &[[f64; 3]]) -> Result<f64> {
    Ok(chamfer(moved, target)? / (moved.len() + target.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn node(g: &mut Graph, pts: &[[f64; 3]]) -> NodeId {
        g.constant([pts.len(), 3], pts.iter().flatten().copied().collect())
    }

    #[test]
    fn flow_loss_zero_on_perfect_prediction_with_inverse_cycle() {
        let mut g = Graph::new();
        let v = vec![[0.4, -0.2, 0.1], [1.0, 0.0, -1.0]];
        let neg: Vec<[f64; 3]> = v.iter().map(|p| [-p[0], -p[1], -p[2]]).collect();
        let pred = node(&mut g, &v);
        let gt = node(&mut g, &v);
        let cyc = node(&mut g, &neg);
        let (f, c) = flow_loss(&mut g, pred, gt, cyc, &[true, true], FlowNorm::L2).unwrap();
        assert_eq!(g.scalar(f), 0.0);
        assert_eq!(g.scalar(c), 0.0);
    }

    #[test]
    fn flow_loss_single_point_hand_value() {
        // v=(1,0,0), v*=0, v'=0, lambda=0.3 -> 1 + 0.3*1 = 1.3
        let mut g = Graph::new();
        let pred = node(&mut g, &[[1.0, 0.0, 0.0]]);
        let gt = node(&mut g, &[[0.0, 0.0, 0.0]]);
        let cyc = node(&mut g, &[[0.0, 0.0, 0.0]]);
        let (f, c) = flow_loss(&mut g, pred, gt, cyc, &[true], FlowNorm::L2).unwrap();
        let total = g.scalar(f) + 0.3 * g.scalar(c);
        assert!((total - 1.3).abs() < 1e-12);
        // doubling lambda doubles only the cycle contribution
        let doubled = g.scalar(f) + 0.6 * g.scalar(c);
        assert!((doubled - 1.6).abs() < 1e-12);
    }

    #[test]
    fn flow_loss_averages_over_full_count_but_sums_masked() {
        // 2 points, one masked out; denominator stays the full count
        let mut g = Graph::new();
        let pred = node(&mut g, &[[1.0, 0.0, 0.0], [9.0, 9.0, 9.0]]);
        let gt = node(&mut g, &[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let cyc = node(&mut g, &[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let (f, _) = flow_loss(&mut g, pred, gt, cyc, &[true, false], FlowNorm::L2).unwrap();
        assert!((g.scalar(f) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flow_loss_l1_norm_switch() {
        let mut g = Graph::new();
        let pred = node(&mut g, &[[3.0, 4.0, 0.0]]);
        let gt = node(&mut g, &[[0.0, 0.0, 0.0]]);
        let cyc = node(&mut g, &[[-3.0, -4.0, 0.0]]);
        let (f2n, _) = flow_loss(&mut g, pred, gt, cyc, &[true], FlowNorm::L2).unwrap();
        let (f1n, _) = flow_loss(&mut g, pred, gt, cyc, &[true], FlowNorm::L1).unwrap();
        assert!((g.scalar(f2n) - 5.0).abs() < 1e-12);
        assert!((g.scalar(f1n) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn flow_loss_rejects_mismatch_and_empty_mask() {
        let mut g = Graph::new();
        let pred = node(&mut g, &[[1.0, 0.0, 0.0]]);
        let gt = node(&mut g, &[[0.0, 0.0, 0.0]]);
        let cyc = node(&mut g, &[[0.0, 0.0, 0.0]]);
        assert!(flow_loss(&mut g, pred, gt, cyc, &[true, true], FlowNorm::L2).is_err());
        assert!(flow_loss(&mut g, pred, gt, cyc, &[false], FlowNorm::L2).is_err());
    }

    #[test]
    fn chamfer_hand_values_and_symmetry() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let c = [[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 1.0, 1.0]];
        let d = [[0.5, 0.0, 0.0], [3.0, 3.0, 3.0]];
        assert_eq!(chamfer(&c, &d).unwrap(), chamfer(&d, &c).unwrap());
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force_exactly_on_random_instances() {
        let mut r = rng::rng_from(31);
        for trial in 0..200 {
            let na = r.gen_range(1..60);
            let nb = r.gen_range(1..60);
            let mk = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<[f64; 3]> {
                (0..n)
                    .map(|_| {
                        [
                            r.gen_range(-5.0..5.0),
                            r.gen_range(-5.0..5.0),
                            r.gen_range(-5.0..5.0),
                        ]
                    })
                    .collect()
            };
            let a = mk(&mut r, na);
            let b = mk(&mut r, nb);
            let fast = chamfer(&a, &b).unwrap();
            let brute = brute_force_chamfer(&a, &b).unwrap();
            assert_eq!(fast.to_bits(), brute.to_bits(), "trial {trial}");
        }
    }

    #[test]
    fn chamfer_graph_matches_plain_and_differentiates() {
        let a = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let b = [[0.5, 0.0, 0.0]];
        let mut g = Graph::new();
        let mut store = crate::tensor::ParamStore::new();
        store.add("a", [2, 3], a.iter().flatten().copied().collect());
        let an = g.param(&store, 0);
        let bn = node(&mut g, &b);
        let ch = chamfer_graph(&mut g, an, bn).unwrap();
        assert_eq!(g.scalar(ch), chamfer(&a, &b).unwrap());
        // d/da0x of (a0x-0.5)^2*2-ish paths: check against finite differences
        let grads = g.backward(ch).unwrap().param_grads(&g, &store);
        let h = 1e-5;
        for k in 0..6 {
            let orig = store.value(0)[k];
            let eval = |store: &crate::tensor::ParamStore| {
                let mut g = Graph::new();
                let an = g.param(store, 0);
                let bn = node(&mut g, &b);
                let ch = chamfer_graph(&mut g, an, bn).unwrap();
                g.scalar(ch)
            };
            store.value_mut(0)[k] = orig + h;
            let up = eval(&store);
            store.value_mut(0)[k] = orig - h;
            let down = eval(&store);
            store.value_mut(0)[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((grads[0][k] - fd).abs() < 1e-6, "coord {k}");
        }
    }

    #[test]
    fn kl_closed_form_values() {
        let mut g = Graph::new();
        // mu=0, sigma=1 -> 0
        let mu = g.constant([1, 3], vec![0.0; 3]);
        let ls = g.constant([1, 3], vec![0.0; 3]);
        let kl = kl_graph(&mut g, mu, ls).unwrap();
        assert_eq!(g.scalar(kl), 0.0);
        // mu=1, sigma=1, one dim -> 0.5
        let mu = g.constant([1, 1], vec![1.0]);
        let ls = g.constant([1, 1], vec![0.0]);
        let kl = kl_graph(&mut g, mu, ls).unwrap();
        assert!((g.scalar(kl) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_nonnegative_and_matches_monte_carlo() {
        let mut r = rng::rng_from(47);
        for _ in 0..5 {
            let mu: f64 = r.gen_range(-2.0..2.0);
            let sigma: f64 = r.gen_range(0.2..2.5);
            let mut g = Graph::new();
            let m = g.constant([1, 1], vec![mu]);
            let ls = g.constant([1, 1], vec![sigma.ln()]);
            let kl_node = kl_graph(&mut g, m, ls).unwrap();
            let kl = g.scalar(kl_node);
            assert!(kl >= 0.0);
            // MC estimate of E_q[log q - log p], q = N(mu, sigma), p = N(0,1)
            let trials = 1_000_000;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..trials {
                let x = mu + sigma * crate::cloud::standard_normal(&mut r);
                let z = (x - mu) / sigma;
                let term = -0.5 * z * z - sigma.ln() + 0.5 * x * x;
                sum += term;
                sum2 += term * term;
            }
            let mean = sum / trials as f64;
            let var = (sum2 / trials as f64 - mean * mean).max(0.0);
            let se = (var / trials as f64).sqrt();
            assert!(
                (kl - mean).abs() < 3.0 * se + 1e-9,
                "mu={mu} sigma={sigma}: closed {kl} vs MC {mean} (se {se})"
            );
        }
    }

    #[test]
    fn recon_loss_composition() {
        let cloud = [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let mut g = Graph::new();
        let c = node(&mut g, &cloud);
        let rec = node(&mut g, &cloud);
        let mu = g.constant([1, 2], vec![0.0, 0.0]);
        let ls = g.constant([1, 2], vec![0.0, 0.0]);
        // perfect reconstruction, standard-normal latent -> 0
        let l = recon_loss(&mut g, c, rec, mu, ls, 0.01).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        // lambda_kl = 0 -> plain chamfer
        let rec2 = node(&mut g, &[[0.5, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let mu2 = g.constant([1, 2], vec![1.0, -1.0]);
        let l2 = recon_loss(&mut g, c, rec2, mu2, ls, 0.0).unwrap();
        let expect = chamfer(&[[0.5, 0.0, 0.0], [1.0, 1.0, 1.0]], &cloud).unwrap();
        assert_eq!(g.scalar(l2), expect);
        // increasing lambda_kl increases the loss when KL > 0
        let l3 = recon_loss(&mut g, c, rec2, mu2, ls, 0.5).unwrap();
        assert!(g.scalar(l3) > g.scalar(l2));
    }

    #[test]
    fn epe_and_acc_hand_values() {
        let gt = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let pred = [[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]];
        let mask = [true, true];
        assert_eq!(epe(&pred, &gt, &mask).unwrap(), 2.5);
        assert_eq!(epe(&pred, &gt, &[true, false]).unwrap(), 5.0);
        assert_eq!(acc(&pred, &gt, &mask, 0.05).unwrap(), 0.5);

        let errs = [[0.04, 0.0, 0.0], [0.07, 0.0, 0.0]];
        let zero = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(acc(&errs, &zero, &mask, 0.05).unwrap(), 0.5);
        assert_eq!(acc(&errs, &zero, &mask, 0.1).unwrap(), 1.0);
        assert!(acc(&errs, &zero, &mask, 0.0).is_err());
        assert!(epe(&errs, &zero, &[false, false]).is_err());
    }

    #[test]
    fn acc_is_monotone_in_threshold() {
        let mut r = rng::rng_from(5);
        let n = 64;
        let gt: Vec<[f64; 3]> = (0..n).map(|_| [0.0, 0.0, 0.0]).collect();
        let pred: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    r.gen_range(-0.2..0.2),
                    r.gen_range(-0.2..0.2),
                    r.gen_range(-0.2..0.2),
                ]
            })
            .collect();
        let mask = vec![true; n];
        let mut last = 0.0;
        for t in [0.01, 0.05, 0.1, 0.2, 1.0] {
            let a = acc(&pred, &gt, &mask, t).unwrap();
            assert!(a >= last);
            last = a;
        }
        assert_eq!(acc(&pred, &gt, &mask, f64::MAX).unwrap(), 1.0);
    }

    #[test]
    fn chamfer_metric_normalizes_per_point() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer_metric(&a, &b).unwrap(), 1.0);
    }
}
