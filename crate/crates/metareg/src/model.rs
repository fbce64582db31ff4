//! The full model: registration learner plus optional meta-learner, with
//! the per-task forward pass (registration, cycle pass, reconstructions)
//! that produces the training loss graph.

use rand_chacha::ChaCha8Rng;

use crate::cloud::TaskPair;
use crate::error::Result;
use crate::learner::{pair_neighbors, Learner, LearnerBindings, PairNeighbors, Theta2Layout};
use crate::loss::{self, FlowNorm, LossBreakdown};
use crate::meta::{LatentMode, MetaBindings, MetaLearner};
use crate::nn::BnContext;
use crate::rng;
use crate::tensor::{BnStats, Graph, NodeId, ParamStore};

/// Model-level hyperparameters (a subset of the run config).
#[derive(Debug, Clone, Copy)]
pub struct ModelHp {
    pub c: usize,
    pub v: usize,
    pub n_points: usize,
    pub r1: f64,
    pub r2: f64,
    pub cap: usize,
    pub lambda_cycle: f64,
    pub lambda_kl: f64,
    pub beta_recon: f64,
    pub flow_norm: FlowNorm,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub use_meta: bool,
}

impl Default for ModelHp {
    fn default() -> Self {
        ModelHp {
            c: 32,
            v: 32,
            n_points: 256,
            r1: 2.0,
            r2: 4.0,
            cap: 16,
            lambda_cycle: 0.3,
            lambda_kl: 0.01,
            beta_recon: 0.1,
            flow_norm: FlowNorm::L2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            use_meta: true,
        }
    }
}

pub struct Model {
    pub hp: ModelHp,
    pub learner: Learner,
    pub meta: Option<MetaLearner>,
    pub layout: Theta2Layout,
    pub store: ParamStore,
    pub bn: BnStats,
    lb: LearnerBindings,
    mb: Option<MetaBindings>,
}

/// Per-forward switches.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts {
    /// Train-mode BN (batch statistics) vs eval-mode (running stats).
    pub train: bool,
    pub latent_mode: LatentMode,
    /// Force theta2 = 0 even when the model has a meta-learner (the
    /// `--no-meta` ablation on a meta checkpoint).
    pub zero_theta2: bool,
    /// Build the loss graph (cycle pass + reconstructions); prediction-only
    /// forwards skip it.
    pub with_losses: bool,
}

impl ForwardOpts {
    pub fn eval() -> Self {
        ForwardOpts {
            train: false,
            latent_mode: LatentMode::Mean,
            zero_theta2: false,
            with_losses: false,
        }
    }

    pub fn train() -> Self {
        ForwardOpts {
            train: true,
            latent_mode: LatentMode::Stochastic,
            zero_theta2: false,
            with_losses: true,
        }
    }
}

/// Everything the trainer needs from one task's forward pass.
pub struct TaskForward {
    pub graph: Graph,
    pub flow: NodeId,
    pub moved: NodeId,
    pub total: Option<NodeId>,
    pub breakdown: Option<LossBreakdown>,
}

impl Model {
    /// Initialize all parameters from the master seed. With
    /// `hp.use_meta = false` no meta parameters exist at all.
    pub fn init(hp: ModelHp, master_seed: u64) -> Result<Self> {
        let learner = Learner::new(hp.c, hp.r1, hp.r2, hp.cap);
        let layout = learner.theta2_layout();
        let mut store = ParamStore::new();
        let mut bn = BnStats::new();
        let mut r = rng::rng_from(rng::derive(master_seed, &[rng::tag::INIT]));
        learner.register_params(&mut store, &mut bn, &mut r);
        let meta = if hp.use_meta {
            let m = MetaLearner::new(hp.v, hp.n_points, &layout);
            m.register_params(&mut store, &mut bn, &mut r);
            Some(m)
        } else {
            None
        };
        let lb = learner.bind(&store, &bn)?;
        let mb = meta.as_ref().map(|m| m.bind(&store, &bn)).transpose()?;
        Ok(Model {
            hp,
            learner,
            meta,
            layout,
            store,
            bn,
            lb,
            mb,
        })
    }

    fn bn_ctx(&self, train: bool) -> BnContext<'_> {
        BnContext {
            stats: &self.bn,
            train,
            eps: self.hp.bn_eps,
            momentum: self.hp.bn_momentum,
        }
    }

    /// Cache the static neighbor sets of one task (reused across steps).
    pub fn task_neighbors(&self, task: &TaskPair) -> Result<PairNeighbors> {
        pair_neighbors(
            &task.source.points,
            &task.target.points,
            self.hp.r1,
            self.hp.r2,
            self.hp.cap,
        )
    }

    /// One task's full forward pass. `rng` drives the latent epsilon draws
    /// (unused in mean mode); `nbrs` are the task's static neighborhoods.
    pub fn forward_task(
        &self,
        task: &TaskPair,
        nbrs: &PairNeighbors,
        opts: ForwardOpts,
        rng: &mut ChaCha8Rng,
    ) -> Result<TaskForward> {
        self.forward_with(&self.store, task, nbrs, opts, rng)
    }

    /// Same forward against an external parameter bank with the model's
    /// layout (finite-difference probing perturbs a store copy).
    pub fn forward_with(
        &self,
        store: &ParamStore,
        task: &TaskPair,
        nbrs: &PairNeighbors,
        opts: ForwardOpts,
        rng: &mut ChaCha8Rng,
    ) -> Result<TaskForward> {
        let prof = std::env::var_os("METAREG_PROF").is_some();
        let mut tmark = std::time::Instant::now();
        let mut lap = |label: &str| {
            if prof {
                eprintln!("  {label}: {:.1} ms", tmark.elapsed().as_secs_f64() * 1e3);
            }
            tmark = std::time::Instant::now();
        };
        let mut g = Graph::new();
        let ns = task.source.len();
        let src = g.constant([ns, 3], task.source.flat());
        let tgt = g.constant([task.target.len(), 3], task.target.flat());
        let ctx = self.bn_ctx(opts.train);

        // meta path: encode both clouds, sample latents, predict theta2
        let meta_state = match (&self.meta, &self.mb, opts.zero_theta2) {
            (Some(meta), Some(mb), false) => {
                let enc_s = meta.encode(&mut g, store, mb, src, &ctx)?;
                let enc_g = meta.encode(&mut g, store, mb, tgt, &ctx)?;
                let l_s = meta.sample_latent(&mut g, enc_s, opts.latent_mode, rng)?;
                let l_g = meta.sample_latent(&mut g, enc_g, opts.latent_mode, rng)?;
                let flat = meta.predict_weights(&mut g, store, mb, l_s, l_g, &ctx)?;
                Some((enc_s, enc_g, l_s, l_g, flat))
            }
            _ => None,
        };
        let flat = meta_state.as_ref().map(|s| s.4);
        lap("meta path");
        let nodes = self.learner.layer_nodes(&mut g, store, &self.lb, flat)?;
        lap("layer_nodes");

        let (flow, moved, src_desc) = self
            .learner
            .register_pass_parts(&mut g, &nodes, src, tgt, None, nbrs, &ctx)?;
        lap("main register_pass");

        if !opts.with_losses {
            return Ok(TaskForward {
                graph: g,
                flow,
                moved,
                total: None,
                breakdown: None,
            });
        }

        // cycle pass: flow from the transformed source back to the source,
        // sharing theta2 (the task has not changed); neighborhoods follow
        // the current moved coordinates
        let moved_pts = loss::as_points(g.values(moved));
        let cycle_nbrs = pair_neighbors(
            &moved_pts,
            &task.source.points,
            self.hp.r1,
            self.hp.r2,
            self.hp.cap,
        )?;
        lap("cycle neighbors");
        // the cycle target is the original source; reuse its descriptor
        let (cycle_flow, _, _) = self.learner.register_pass_parts(
            &mut g,
            &nodes,
            moved,
            src,
            Some(src_desc),
            &cycle_nbrs,
            &ctx,
        )?;
        lap("cycle register_pass");

        let gt = g.constant([ns, 3], task.gt_flow.flat());
        let (flow_term, cycle_term) =
            loss::flow_loss(&mut g, flow, gt, cycle_flow, &task.mask, self.hp.flow_norm)?;

        let hp = self.hp;
        let mut total = {
            let cyc_w = g.scale(cycle_term, hp.lambda_cycle);
            g.add(flow_term, cyc_w)?
        };
        let mut breakdown = LossBreakdown {
            flow_term: g.scalar(flow_term),
            cycle_term: g.scalar(cycle_term),
            chamfer_s: 0.0,
            chamfer_g: 0.0,
            kl_s: 0.0,
            kl_g: 0.0,
            total: 0.0,
            lambda_cycle: hp.lambda_cycle,
            lambda_kl: hp.lambda_kl,
            beta_recon: hp.beta_recon,
        };

        if let (Some(meta), Some(mb), Some((enc_s, enc_g, l_s, l_g, _))) =
            (&self.meta, &self.mb, meta_state)
        {
            let recon = |g: &mut Graph,
                             cloud: NodeId,
                             latent: NodeId,
                             enc: crate::meta::EncodedCloud|
             -> Result<(NodeId, f64, f64)> {
                let rec = meta.decode(g, store, mb, latent, &ctx)?;
                let ch = loss::chamfer_graph(g, rec, cloud)?;
                let kl = loss::kl_graph(g, enc.mu, enc.log_sigma)?;
                let klw = g.scale(kl, hp.lambda_kl);
                let term = g.add(ch, klw)?;
                Ok((term, g.scalar(ch), g.scalar(kl)))
            };
            let (term_s, ch_s, kl_s) = recon(&mut g, src, l_s, enc_s)?;
            let (term_g, ch_g, kl_g) = recon(&mut g, tgt, l_g, enc_g)?;
            let recon_sum = g.add(term_s, term_g)?;
            let recon_w = g.scale(recon_sum, hp.beta_recon);
            total = g.add(total, recon_w)?;
            breakdown.chamfer_s = ch_s;
            breakdown.chamfer_g = ch_g;
            breakdown.kl_s = kl_s;
            breakdown.kl_g = kl_g;
        }
        lap("losses");
        breakdown.total = g.scalar(total);

        Ok(TaskForward {
            graph: g,
            flow,
            moved,
            total: Some(total),
            breakdown: Some(breakdown),
        })
    }

    /// Prediction-only forward returning the flow and moved coordinates.
    pub fn predict(
        &self,
        task: &TaskPair,
        opts: ForwardOpts,
    ) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
        let nbrs = self.task_neighbors(task)?;
        let mut rng = rng::rng_from(rng::derive(task.seed, &[rng::tag::LATENT_EPS]));
        let fwd = self.forward_task(task, &nbrs, opts, &mut rng)?;
        Ok((
            loss::as_points(fwd.graph.values(fwd.flow)),
            loss::as_points(fwd.graph.values(fwd.moved)),
        ))
    }
}

/// Finite-difference check of the composed learner + meta-learner stack on
/// an 8-point pair (the `gradcheck --full` path). The f2 output layer is
/// perturbed away from zero so the theta2 path carries gradient.
///
/// A looser kink margin than the per-op suite is used: the full stack
/// evaluates thousands of ReLU/max sites, so the minimum margin over all of
/// them is naturally small. 1e-4 still dwarfs the probing step of 1e-5.
pub fn full_stack_check(seed: u64) -> Result<crate::tensor::gradcheck::OpReport> {
    use crate::cloud::shapes::{generate_shape, Category};
    use crate::cloud::{FlowField, NoiseKind};
    use crate::tensor::gradcheck::{OpReport, FD_H};
    use rand::Rng;

    const MARGIN: f64 = 1e-4;
    const COORDS_PER_PARAM: usize = 4;

    'attempt: for attempt in 0..16u64 {
        let s = rng::derive(seed, &[0xf5, attempt]);
        let hp = ModelHp {
            c: 4,
            v: 3,
            n_points: 8,
            cap: 4,
            ..ModelHp::default()
        };
        let mut model = Model::init(hp, s)?;
        let mut r = rng::rng_from(rng::derive(s, &[0x5f]));
        let wid = model.store.id("f2/l2/w").expect("f2 registered");
        for v in model.store.value_mut(wid) {
            *v = r.gen_range(-0.05..0.05);
        }
        let bid = model.store.id("f2/l2/b").expect("f2 registered");
        for v in model.store.value_mut(bid) {
            *v = r.gen_range(-0.05..0.05);
        }
        let source = generate_shape(Category::Sphere, 8, rng::derive(s, &[1]))?;
        let target = generate_shape(Category::Box, 8, rng::derive(s, &[2]))?;
        let gt_flow = FlowField {
            vectors: source
                .points
                .iter()
                .zip(&target.points)
                .map(|(a, b)| [b[0] - a[0], b[1] - a[1], b[2] - a[2]])
                .collect(),
        };
        let task = TaskPair {
            source,
            target,
            gt_flow,
            mask: vec![true; 8],
            noise: NoiseKind::None,
            category: Category::Sphere,
            seed: s,
        };
        let nbrs = model.task_neighbors(&task)?;
        let run = |st: &ParamStore| -> Result<(Graph, NodeId)> {
            let mut eps_rng = rng::rng_from(rng::derive(s, &[rng::tag::LATENT_EPS]));
            let fwd = model.forward_with(st, &task, &nbrs, ForwardOpts::train(), &mut eps_rng)?;
            Ok((fwd.graph, fwd.total.expect("losses requested")))
        };

        let mut store = model.store.clone();
        let (graph, total) = run(&store)?;
        if graph.kink_margin < MARGIN {
            continue;
        }
        let grads = graph.backward(total)?.param_grads(&graph, &store);

        let mut coord_rng = rng::rng_from(rng::derive(s, &[0xfd]));
        let mut max_err: f64 = 0.0;
        for pid in 0..store.len() {
            let len = store.value(pid).len();
            let coords: Vec<usize> = if len <= COORDS_PER_PARAM {
                (0..len).collect()
            } else {
                (0..COORDS_PER_PARAM)
                    .map(|_| coord_rng.gen_range(0..len))
                    .collect()
            };
            for i in coords {
                let orig = store.value(pid)[i];
                store.value_mut(pid)[i] = orig + FD_H;
                let (gp, lp) = run(&store)?;
                let fp = gp.scalar(lp);
                store.value_mut(pid)[i] = orig - FD_H;
                let (gm, lm) = run(&store)?;
                let fm = gm.scalar(lm);
                store.value_mut(pid)[i] = orig;
                if gp.kink_margin < MARGIN / 2.0 || gm.kink_margin < MARGIN / 2.0 {
                    continue 'attempt;
                }
                let fd = (fp - fm) / (2.0 * FD_H);
                let denom = grads[pid][i].abs().max(fd.abs()).max(1e-2);
                max_err = max_err.max((grads[pid][i] - fd).abs() / denom);
            }
        }
        return Ok(OpReport {
            name: "full_stack".to_string(),
            max_rel_err: max_err,
        });
    }
    Err(crate::Error::Precondition {
        op: "gradcheck",
        msg: "full stack: could not sample away from non-differentiable points".into(),
    })
}
