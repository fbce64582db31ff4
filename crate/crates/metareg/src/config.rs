//! Run configuration: a flat TOML file with fixed key names, strict
//! unknown-key rejection, desk-scale defaults, and a stable fingerprint
//! used to guard checkpoint resumption.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{Category, NoiseKind};
use crate::error::{Error, Result};
use crate::loss::FlowNorm;
use crate::model::ModelHp;
use crate::tensor::adam::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // dataset
    pub master_seed: u64,
    pub train_categories: Vec<String>,
    pub eval_categories: Vec<String>,
    pub tasks_per_category: usize,
    pub n_points: usize,
    pub noise: String,
    /// Std-dev of Gaussian drift (applies when `noise = "gaussian_drift"`).
    pub noise_sigma: f64,
    /// Kept fraction under incompleteness cropping.
    pub crop_ratio: f64,
    /// Outliers added as a fraction of n_points.
    pub outlier_ratio: f64,

    // model dims
    pub c: usize,
    pub v: usize,
    pub r1: f64,
    pub r2: f64,
    pub neighbor_cap: usize,

    // loss weights
    pub lambda_cycle: f64,
    pub lambda_kl: f64,
    pub beta_recon: f64,
    pub flow_norm: String,

    // optimizer / schedule
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_steps: u64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,

    // evaluation
    pub acc_thresholds: Vec<f64>,
    pub use_meta: bool,

    // batch norm
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Fraction of total steps trained with batch-stat BN before the
    /// running stats freeze and training continues in eval-mode BN.
    pub bn_freeze_frac: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 1,
            train_categories: [
                "sphere", "box", "cylinder", "cone", "torus", "plane", "helix", "cross",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            eval_categories: ["pyramid", "ellipsoid", "two_spheres", "l_bracket"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            tasks_per_category: 25,
            n_points: 256,
            noise: "none".into(),
            noise_sigma: 0.05,
            crop_ratio: 0.75,
            outlier_ratio: 0.1,
            c: 32,
            v: 32,
            r1: 2.0,
            r2: 4.0,
            neighbor_cap: 16,
            lambda_cycle: 0.3,
            lambda_kl: 0.01,
            beta_recon: 0.1,
            flow_norm: "l2".into(),
            lr: 0.001,
            lr_decay: 0.7,
            decay_steps: 500,
            batch_size: 4,
            total_steps: 2000,
            checkpoint_every: 500,
            log_every: 50,
            acc_thresholds: vec![0.05, 0.1],
            use_meta: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            bn_freeze_frac: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn parse_categories(names: &[String]) -> Result<Vec<Category>> {
        names.iter().map(|s| Category::from_str(s)).collect()
    }

    pub fn noise_kind(&self) -> Result<NoiseKind> {
        NoiseKind::from_str(&self.noise)
    }

    pub fn flow_norm(&self) -> Result<FlowNorm> {
        FlowNorm::from_str(&self.flow_norm)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let train = Self::parse_categories(&self.train_categories)?;
        let eval = Self::parse_categories(&self.eval_categories)?;
        if train.is_empty() || eval.is_empty() {
            return fail("category lists must be non-empty".into());
        }
        if let Some(c) = train.iter().find(|c| eval.contains(c)) {
            return fail(format!("category {c} appears in both splits"));
        }
        self.noise_kind()?;
        self.flow_norm()?;
        if self.n_points < 8 {
            return fail(format!("n_points must be >= 8, got {}", self.n_points));
        }
        if self.tasks_per_category == 0 || self.batch_size == 0 {
            return fail("tasks_per_category and batch_size must be positive".into());
        }
        if self.c == 0 || self.v == 0 || self.neighbor_cap == 0 {
            return fail("c, v and neighbor_cap must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_freeze_frac) {
            return fail(format!(
                "bn_freeze_frac must be in [0, 1], got {}",
                self.bn_freeze_frac
            ));
        }
        if self.r1 <= 0.0 || self.r2 <= 0.0 {
            return fail(format!("radii must be positive, got r1={}, r2={}", self.r1, self.r2));
        }
        if self.lr <= 0.0 || !(0.0..=1.0).contains(&self.lr_decay) || self.lr_decay == 0.0 {
            return fail(format!(
                "need lr > 0 and 0 < lr_decay <= 1, got lr={}, lr_decay={}",
                self.lr, self.lr_decay
            ));
        }
        if self.decay_steps == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return fail("decay_steps, log_every and checkpoint_every must be positive".into());
        }
        if !(0.0 < self.crop_ratio && self.crop_ratio <= 1.0) {
            return fail(format!("crop_ratio must be in (0, 1], got {}", self.crop_ratio));
        }
        if self.noise_sigma < 0.0 || self.outlier_ratio < 0.0 {
            return fail("noise_sigma and outlier_ratio must be non-negative".into());
        }
        if self.acc_thresholds.is_empty() || self.acc_thresholds.iter().any(|&t| t <= 0.0) {
            return fail("acc_thresholds must be positive".into());
        }
        if self.lambda_cycle < 0.0 || self.lambda_kl < 0.0 || self.beta_recon < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn model_hp(&self) -> Result<ModelHp> {
        Ok(ModelHp {
            c: self.c,
            v: self.v,
            n_points: self.n_points,
            r1: self.r1,
            r2: self.r2,
            cap: self.neighbor_cap,
            lambda_cycle: self.lambda_cycle,
            lambda_kl: self.lambda_kl,
            beta_recon: self.beta_recon,
            flow_norm: self.flow_norm()?,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            use_meta: self.use_meta,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            decay: self.lr_decay,
            decay_steps: self.decay_steps,
            ..AdamConfig::default()
        }
    }

    /// Stable 64-bit digest of the full config (first 8 bytes of the
    /// SHA-256 of its canonical JSON form).
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("banana = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg: RunConfig = toml::from_str("total_steps = 10\nbatch_size = 2\n").unwrap();
        assert_eq!(cfg.total_steps, 10);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.n_points, 256);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_overlapping_splits() {
        let mut cfg = RunConfig::default();
        cfg.eval_categories.push("sphere".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let cases: Vec<(&str, Box<dyn Fn(&mut RunConfig)>)> = vec![
            ("bad noise", Box::new(|c| c.noise = "static".into())),
            ("bad norm", Box::new(|c| c.flow_norm = "linf".into())),
            ("n_points", Box::new(|c| c.n_points = 4)),
            ("lr", Box::new(|c| c.lr = 0.0)),
            ("decay", Box::new(|c| c.lr_decay = 1.5)),
            ("crop", Box::new(|c| c.crop_ratio = 0.0)),
            ("radius", Box::new(|c| c.r2 = -1.0)),
            ("thresholds", Box::new(|c| c.acc_thresholds = vec![])),
            ("category", Box::new(|c| c.train_categories = vec!["cat".into()])),
        ];
        for (name, mutate) in cases {
            let mut cfg = RunConfig::default();
            mutate(&mut cfg);
            assert!(cfg.validate().is_err(), "{name} accepted");
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.total_steps += 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
