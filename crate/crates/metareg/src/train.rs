//! Training loop: batched task draws, data-parallel forward/backward,
//! averaged gradients, one joint Adam update per step, deterministic BN
//! running-stat application, and bit-exact checkpoint/resume.

use std::path::Path;

use crate::checkpoint::{self, Checkpoint};
use crate::cloud::TaskPair;
use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::error::{Error, Result};
use crate::learner::PairNeighbors;
use crate::model::{ForwardOpts, Model};
use crate::par;
use crate::rng;
use crate::tensor::adam::AdamState;
use crate::tensor::BnUpdate;
use rand::Rng;

/// One line of the step log.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct StepLog {
    pub step: u64,
    pub flow: f64,
    pub cycle: f64,
    pub chamfer: f64,
    pub kl: f64,
    pub total: f64,
    pub lr: f64,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub adam: AdamState,
    pub step: u64,
    pub tasks: Vec<TaskPair>,
    neighbors: Vec<PairNeighbors>,
}

impl Trainer {
    /// Fresh trainer: build the training split and initialize all weights
    /// from the master seed.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::init(cfg.model_hp()?, cfg.master_seed)?;
        let adam = AdamState::new(&model.store, cfg.adam());
        let tasks = data::build_dataset(&cfg, Split::Train, cfg.noise_kind()?)?;
        let neighbors = Self::cache_neighbors(&model, &tasks)?;
        Ok(Trainer {
            cfg,
            model,
            adam,
            step: 0,
            tasks,
            neighbors,
        })
    }

    /// Resume from a checkpoint; the stored config fingerprint must match.
    pub fn resume(cfg: RunConfig, ckpt: &Path) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        let ck = Checkpoint::load(ckpt)?;
        let (adam, state) =
            checkpoint::decode_state(&ck, &mut t.model.store, &mut t.model.bn, t.cfg.adam())?;
        checkpoint::check_fingerprint(t.cfg.fingerprint(), state.fingerprint)?;
        if state.layout != t.model.layout {
            return Err(Error::Checkpoint(
                "theta2 partition map differs from the model layout".into(),
            ));
        }
        t.adam = adam;
        t.step = state.step;
        Ok(t)
    }

    fn cache_neighbors(model: &Model, tasks: &[TaskPair]) -> Result<Vec<PairNeighbors>> {
        par::map_indexed(tasks.len(), |i| model.task_neighbors(&tasks[i]))
            .into_iter()
            .collect()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ck = checkpoint::encode_state(
            &self.model.store,
            &self.model.bn,
            &self.adam,
            &self.model.layout,
            self.step,
            self.cfg.fingerprint(),
        );
        ck.save(path)
    }

    /// Batch task indices for a step, a pure function of (config, step).
    fn batch_indices(&self, step: u64) -> Vec<usize> {
        let mut r = rng::rng_from(rng::derive(
            self.cfg.master_seed,
            &[rng::tag::BATCH, step],
        ));
        (0..self.cfg.batch_size)
            .map(|_| r.gen_range(0..self.tasks.len()))
            .collect()
    }

    /// One optimization step. Returns the logged loss terms.
    pub fn step_once(&mut self) -> Result<StepLog> {
        let step = self.step;
        let batch = self.batch_indices(step);
        let seed = self.cfg.master_seed;
        // Batch-stat BN while the running stats accumulate, then frozen
        // (eval-mode) BN so the weights adapt to the exact normalization
        // used at evaluation; with one cloud per forward the two modes
        // otherwise disagree enough to dominate the eval error.
        let freeze = (self.cfg.total_steps as f64 * self.cfg.bn_freeze_frac) as u64;
        let opts = ForwardOpts {
            train: step < freeze,
            ..ForwardOpts::train()
        };

        struct TaskResult {
            grads: Vec<Vec<f64>>,
            bn_updates: Vec<BnUpdate>,
            breakdown: crate::loss::LossBreakdown,
        }

        let results: Result<Vec<TaskResult>> =
            par::map_indexed(batch.len(), |slot| -> Result<TaskResult> {
                let ti = batch[slot];
                let task = &self.tasks[ti];
                let mut eps_rng = rng::rng_from(rng::derive(
                    seed,
                    &[rng::tag::LATENT_EPS, step, slot as u64],
                ));
                let mut fwd = self.model.forward_task(
                    task,
                    &self.neighbors[ti],
                    opts,
                    &mut eps_rng,
                )?;
                let total = fwd.total.expect("losses requested");
                let breakdown = fwd.breakdown.expect("losses requested");
                for (term, v) in [
                    ("flow", breakdown.flow_term),
                    ("cycle", breakdown.cycle_term),
                    ("chamfer_s", breakdown.chamfer_s),
                    ("chamfer_g", breakdown.chamfer_g),
                    ("kl_s", breakdown.kl_s),
                    ("kl_g", breakdown.kl_g),
                    ("total", breakdown.total),
                ] {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteLoss { step, term });
                    }
                }
                let grads = fwd
                    .graph
                    .backward(total)?
                    .param_grads(&fwd.graph, &self.model.store);
                Ok(TaskResult {
                    grads,
                    bn_updates: fwd.graph.take_bn_updates(),
                    breakdown,
                })
            })
            .into_iter()
            .collect();
        let results = results?;

        // batch-mean gradients
        let scale = 1.0 / results.len() as f64;
        let mut grads: Vec<Vec<f64>> = (0..self.model.store.len())
            .map(|id| vec![0.0; self.model.store.value(id).len()])
            .collect();
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v * scale;
                }
            }
        }
        self.adam.step(&mut self.model.store, &grads);

        // running BN stats: deferred updates applied in (slot, record)
        // order so parallel forwards stay bit-identical to sequential
        for r in &results {
            self.model.bn.apply_updates(&r.bn_updates);
        }

        let mut log = StepLog {
            step,
            flow: 0.0,
            cycle: 0.0,
            chamfer: 0.0,
            kl: 0.0,
            total: 0.0,
            lr: 0.0,
        };
        for r in &results {
            log.flow += r.breakdown.flow_term * scale;
            log.cycle += r.breakdown.cycle_term * scale;
            log.chamfer += (r.breakdown.chamfer_s + r.breakdown.chamfer_g) * scale;
            log.kl += (r.breakdown.kl_s + r.breakdown.kl_g) * scale;
            log.total += r.breakdown.total * scale;
        }
        self.step += 1;
        log.lr = {
            // lr that was in effect for this update
            let decays = step / self.cfg.decay_steps;
            self.cfg.lr * self.cfg.lr_decay.powi(decays as i32)
        };
        Ok(log)
    }

    /// Run to `cfg.total_steps`, invoking `on_log` after every step and
    /// writing periodic checkpoints into `out_dir` when provided.
    pub fn run(
        &mut self,
        out_dir: Option<&Path>,
        mut on_log: impl FnMut(&StepLog),
    ) -> Result<Vec<StepLog>> {
        let mut logs = Vec::new();
        while self.step < self.cfg.total_steps {
            let log = self.step_once()?;
            on_log(&log);
            logs.push(log);
            if let Some(dir) = out_dir {
                if self.step % self.cfg.checkpoint_every == 0 || self.step == self.cfg.total_steps
                {
                    self.save_checkpoint(&dir.join(format!("step_{:06}.ckpt", self.step)))?;
                }
            }
        }
        Ok(logs)
    }
}
