//! The registration meta-learner: a VAE over per-cloud global shape codes
//! (encoder f1 with mean / log-std heads, linear decoder) and a
//! hypernetwork f2 mapping the concatenated pair of task latents to the
//! flat theta2 vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learner::Theta2Layout;
use crate::nn::{base_layer_nodes, mlp_forward, BnContext, InitKind, LayerBinding, MlpSpec};
use crate::tensor::{BnStats, Graph, NodeId, ParamStore};

/// Latent sampling behavior: stochastic (reparameterized) during training,
/// the distribution mean at evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    Stochastic,
    Mean,
}

#[derive(Debug, Clone)]
pub struct MetaLearner {
    pub f1: MlpSpec,
    pub mu_head: MlpSpec,
    pub sigma_head: MlpSpec,
    pub decoder: MlpSpec,
    pub f2: MlpSpec,
    pub v: usize,
    pub n_points: usize,
}

#[derive(Debug, Clone)]
pub struct MetaBindings {
    pub f1: Vec<LayerBinding>,
    pub mu_head: Vec<LayerBinding>,
    pub sigma_head: Vec<LayerBinding>,
    pub decoder: Vec<LayerBinding>,
    pub f2: Vec<LayerBinding>,
}

/// Graph nodes for one task's latent distribution and sampled code.
#[derive(Debug, Clone, Copy)]
pub struct EncodedCloud {
    pub mu: NodeId,
    pub log_sigma: NodeId,
}

impl MetaLearner {
    /// `v` is the latent width, `n_points` the fixed decoder output size,
    /// `theta2_total` the hypernetwork's output width.
    pub fn new(v: usize, n_points: usize, layout: &Theta2Layout) -> Self {
        MetaLearner {
            f1: MlpSpec::new("f1", &[3, 16, 16, 32], true),
            mu_head: MlpSpec::new("mu_head", &[32, v], false),
            sigma_head: MlpSpec::new("sigma_head", &[32, v], false),
            decoder: MlpSpec::new("decoder", &[v, 3 * n_points], false),
            f2: MlpSpec::new("f2", &[2 * v, 64, 128, layout.total], false),
            v,
            n_points,
        }
    }

    /// Register all meta parameters. The f2 output layer is zero-initialized
    /// so theta2 is exactly zero before any training.
    pub fn register_params(&self, store: &mut ParamStore, bn: &mut BnStats, rng: &mut ChaCha8Rng) {
        self.f1.register(store, bn, rng, InitKind::Glorot);
        self.mu_head.register(store, bn, rng, InitKind::Glorot);
        self.sigma_head.register(store, bn, rng, InitKind::Glorot);
        self.decoder.register(store, bn, rng, InitKind::Glorot);
        self.f2.register(store, bn, rng, InitKind::Zero);
    }

    pub fn bind(&self, store: &ParamStore, bn: &BnStats) -> Result<MetaBindings> {
        Ok(MetaBindings {
            f1: self.f1.bind(store, bn)?,
            mu_head: self.mu_head.bind(store, bn)?,
            sigma_head: self.sigma_head.bind(store, bn)?,
            decoder: self.decoder.bind(store, bn)?,
            f2: self.f2.bind(store, bn)?,
        })
    }

    /// Encode one cloud: shared per-point MLP, channel max-pool over all
    /// points, linear heads for mu and log-sigma (each `[1, v]`).
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        b: &MetaBindings,
        coords: NodeId,
        bn: &BnContext,
    ) -> Result<EncodedCloud> {
        let f1 = base_layer_nodes(g, store, &b.f1);
        let feat = mlp_forward(g, coords, &f1, bn, "f1")?;
        let pooled = g.reduce_max(feat)?;
        let mu_l = base_layer_nodes(g, store, &b.mu_head);
        let sig_l = base_layer_nodes(g, store, &b.sigma_head);
        let mu = mlp_forward(g, pooled, &mu_l, bn, "mu_head")?;
        let log_sigma = mlp_forward(g, pooled, &sig_l, bn, "sigma_head")?;
        Ok(EncodedCloud { mu, log_sigma })
    }

    /// Reparameterized sample `L = mu + exp(log_sigma) * eps` (gradients
    /// flow to both heads); `Mean` mode returns mu directly.
    pub fn sample_latent(
        &self,
        g: &mut Graph,
        enc: EncodedCloud,
        mode: LatentMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        match mode {
            LatentMode::Mean => Ok(enc.mu),
            LatentMode::Stochastic => {
                let eps: Vec<f64> = (0..self.v)
                    .map(|_| crate::cloud::standard_normal(rng))
                    .collect();
                let eps = g.constant([1, self.v], eps);
                let sigma = g.exp(enc.log_sigma);
                let scaled = g.mul(sigma, eps)?;
                g.add(enc.mu, scaled)
            }
        }
    }

    /// Decode a latent back to an `[n_points, 3]` reconstruction.
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        b: &MetaBindings,
        latent: NodeId,
        bn: &BnContext,
    ) -> Result<NodeId> {
        let layers = base_layer_nodes(g, store, &b.decoder);
        let flat = mlp_forward(g, latent, &layers, bn, "decoder")?;
        g.reshape(flat, [self.n_points, 3])
    }

    /// Hypernetwork: `[L_S, L_G]` -> flat theta2 vector `[1, total]`.
    pub fn predict_weights(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        b: &MetaBindings,
        latent_src: NodeId,
        latent_tgt: NodeId,
        bn: &BnContext,
    ) -> Result<NodeId> {
        if g.shape(latent_src) != [1, self.v] || g.shape(latent_tgt) != [1, self.v] {
            return Err(Error::Structural {
                layer: "f2".into(),
                msg: format!(
                    "latents {:?} / {:?}, expected [1, {}] each",
                    g.shape(latent_src),
                    g.shape(latent_tgt),
                    self.v
                ),
            });
        }
        let cat = g.concat_cols(&[latent_src, latent_tgt])?;
        let layers = base_layer_nodes(g, store, &b.f2);
        mlp_forward(g, cat, &layers, bn, "f2")
    }
}

/// Draw a fresh epsilon vector outside any graph (test utility).
pub fn standard_normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| crate::cloud::standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::shapes::{generate_shape, Category};
    use crate::learner::Learner;
    use crate::rng;

    fn setup(v: usize, n: usize) -> (MetaLearner, ParamStore, BnStats) {
        let learner = Learner::new(8, 2.0, 4.0, 16);
        let layout = learner.theta2_layout();
        let meta = MetaLearner::new(v, n, &layout);
        let mut store = ParamStore::new();
        let mut bn = BnStats::new();
        let mut r = rng::rng_from(rng::derive(7, &[rng::tag::INIT]));
        meta.register_params(&mut store, &mut bn, &mut r);
        (meta, store, bn)
    }

    fn eval_ctx(bn: &BnStats) -> BnContext<'_> {
        BnContext {
            stats: bn,
            train: false,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn encode_values(
        meta: &MetaLearner,
        store: &ParamStore,
        bn: &BnStats,
        pts: &[[f64; 3]],
    ) -> (Vec<f64>, Vec<f64>) {
        let b = meta.bind(store, bn).unwrap();
        let mut g = Graph::new();
        let coords = g.constant([pts.len(), 3], pts.iter().flatten().copied().collect());
        let ctx = eval_ctx(bn);
        let enc = meta.encode(&mut g, store, &b, coords, &ctx).unwrap();
        (g.values(enc.mu).to_vec(), g.values(enc.log_sigma).to_vec())
    }

    #[test]
    fn encode_is_permutation_invariant_exactly() {
        let (meta, store, bn) = setup(6, 16);
        let cloud = generate_shape(Category::Torus, 40, 3).unwrap();
        let (mu_a, ls_a) = encode_values(&meta, &store, &bn, &cloud.points);
        let mut permuted = cloud.points.clone();
        permuted.rotate_left(17);
        permuted.reverse();
        let (mu_b, ls_b) = encode_values(&meta, &store, &bn, &permuted);
        assert!(mu_a.iter().zip(&mu_b).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ls_a.iter().zip(&ls_b).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn encode_is_idempotent_under_duplication() {
        let (meta, store, bn) = setup(6, 16);
        let cloud = generate_shape(Category::Cone, 25, 9).unwrap();
        let (mu_a, ls_a) = encode_values(&meta, &store, &bn, &cloud.points);
        let doubled: Vec<[f64; 3]> = cloud
            .points
            .iter()
            .chain(cloud.points.iter())
            .copied()
            .collect();
        let (mu_b, ls_b) = encode_values(&meta, &store, &bn, &doubled);
        assert_eq!(mu_a, mu_b);
        assert_eq!(ls_a, ls_b);
    }

    #[test]
    fn latent_dims_match_config() {
        for v in [4, 9] {
            let (meta, store, bn) = setup(v, 16);
            let cloud = generate_shape(Category::Plane, 20, 1).unwrap();
            let (mu, ls) = encode_values(&meta, &store, &bn, &cloud.points);
            assert_eq!(mu.len(), v);
            assert_eq!(ls.len(), v);
        }
    }

    #[test]
    fn mean_mode_is_mu_and_deterministic() {
        let (meta, store, bn) = setup(5, 16);
        let mut g = Graph::new();
        let mu = g.constant([1, 5], vec![0.3, -1.0, 2.0, 0.0, 4.5]);
        let ls = g.constant([1, 5], vec![0.0; 5]);
        let enc = EncodedCloud { mu, log_sigma: ls };
        let _ = (&store, &bn);
        let mut r1 = rng::rng_from(1);
        let mut r2 = rng::rng_from(2);
        let a = meta
            .sample_latent(&mut g, enc, LatentMode::Mean, &mut r1)
            .unwrap();
        let b = meta
            .sample_latent(&mut g, enc, LatentMode::Mean, &mut r2)
            .unwrap();
        assert_eq!(g.values(a), g.values(b));
        assert_eq!(g.values(a), &[0.3, -1.0, 2.0, 0.0, 4.5]);
    }

    #[test]
    fn zero_sigma_sample_equals_mu() {
        let (meta, ..) = setup(4, 16);
        let mut g = Graph::new();
        let mu = g.constant([1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        // log sigma -> -inf is not representable; -1e3 gives sigma == 0.0
        // after underflow, the exact zero-sigma case
        let ls = g.constant([1, 4], vec![-1e3; 4]);
        let enc = EncodedCloud { mu, log_sigma: ls };
        let mut r = rng::rng_from(11);
        let s = meta
            .sample_latent(&mut g, enc, LatentMode::Stochastic, &mut r)
            .unwrap();
        assert_eq!(g.values(s), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn stochastic_sample_empirical_mean_matches_mu() {
        let (meta, ..) = setup(3, 16);
        let mu_v = [0.5, -0.25, 1.5];
        let sigma = 0.4_f64;
        let trials = 100_000;
        let mut sums = [0.0; 3];
        let mut r = rng::rng_from(19);
        for _ in 0..trials {
            let mut g = Graph::new();
            let mu = g.constant([1, 3], mu_v.to_vec());
            let ls = g.constant([1, 3], vec![sigma.ln(); 3]);
            let enc = EncodedCloud { mu, log_sigma: ls };
            let s = meta
                .sample_latent(&mut g, enc, LatentMode::Stochastic, &mut r)
                .unwrap();
            for (acc, v) in sums.iter_mut().zip(g.values(s)) {
                *acc += v;
            }
        }
        let bound = 3.0 * sigma / (trials as f64).sqrt();
        for k in 0..3 {
            let mean = sums[k] / trials as f64;
            assert!((mean - mu_v[k]).abs() < bound, "dim {k}: {mean}");
        }
    }

    #[test]
    fn decoder_shape_contract_and_zero_weights() {
        let (meta, mut store, bn) = setup(6, 11);
        let b = meta.bind(&store, &bn).unwrap();
        let mut g = Graph::new();
        let latent = g.constant([1, 6], vec![0.2; 6]);
        let ctx = eval_ctx(&bn);
        let rec = meta.decode(&mut g, &store, &b, latent, &ctx).unwrap();
        assert_eq!(g.shape(rec), [11, 3]);

        store.value_mut(store.id("decoder/l0/w").unwrap()).fill(0.0);
        let mut g = Graph::new();
        let latent = g.constant([1, 6], vec![0.2; 6]);
        let rec = meta.decode(&mut g, &store, &b, latent, &ctx).unwrap();
        assert!(g.values(rec).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_weights_zero_init_and_order_sensitivity() {
        let learner = Learner::new(8, 2.0, 4.0, 16);
        let layout = learner.theta2_layout();
        let (meta, mut store, bn) = setup(6, 16);
        let b = meta.bind(&store, &bn).unwrap();
        let run = |store: &ParamStore, a: &[f64], c: &[f64]| -> Vec<f64> {
            let mut g = Graph::new();
            let la = g.constant([1, 6], a.to_vec());
            let lc = g.constant([1, 6], c.to_vec());
            let ctx = eval_ctx(&bn);
            let out = meta
                .predict_weights(&mut g, store, &b, la, lc, &ctx)
                .unwrap();
            assert_eq!(g.shape(out), [1, layout.total]);
            g.values(out).to_vec()
        };
        let ls = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let lg = [-0.6, 0.5, -0.4, 0.3, -0.2, 0.1];
        // zero-initialized final layer -> theta2 identically zero
        assert!(run(&store, &ls, &lg).iter().all(|&v| v == 0.0));

        // after perturbing the final layer, argument order matters and
        // different latent pairs give different banks
        let wid = store.id("f2/l2/w").unwrap();
        let mut r = rng::rng_from(23);
        for v in store.value_mut(wid) {
            *v = r.gen_range(-0.05..0.05);
        }
        let fwd = run(&store, &ls, &lg);
        let swapped = run(&store, &lg, &ls);
        let other = run(&store, &lg, &lg);
        assert!(fwd.iter().zip(&swapped).any(|(a, b)| a != b));
        assert!(fwd.iter().zip(&other).any(|(a, b)| a != b));
    }

    #[test]
    fn predict_weights_rejects_bad_latent_width() {
        let (meta, store, bn) = setup(6, 16);
        let b = meta.bind(&store, &bn).unwrap();
        let mut g = Graph::new();
        let la = g.constant([1, 5], vec![0.0; 5]);
        let lc = g.constant([1, 6], vec![0.0; 6]);
        let ctx = eval_ctx(&bn);
        assert!(matches!(
            meta.predict_weights(&mut g, &store, &b, la, lc, &ctx),
            Err(Error::Structural { .. })
        ));
    }
}
