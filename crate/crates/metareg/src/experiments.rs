//! Experiment presets: latent sweep, seen/unseen ablation of the
//! meta-learner, and noise robustness. Each preset trains fresh models from
//! a base config, evaluates on the held-out (unseen-category) split, and
//! returns one [`RunRecord`] per table row.

use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::report::RunRecord;
use crate::train::Trainer;

pub const PRESETS: &[&str] = &["latent_sweep", "unseen_categories", "noise_robustness"];

/// Latent sizes swept by the `latent_sweep` preset.
pub const LATENT_SWEEP_V: &[usize] = &[8, 16, 32, 64, 128];

/// Noise kinds exercised by the `noise_robustness` preset.
pub const NOISE_KINDS: &[&str] = &["gaussian_drift", "incompleteness", "outliers"];

/// Train one model under `cfg` and evaluate it on the unseen-category split
/// (with the config's own noise kind applied to the eval tasks as well).
pub fn train_and_eval(cfg: &RunConfig, preset: &str, label: &str) -> Result<RunRecord> {
    cfg.validate()?;
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.run(None, |_| {})?;
    let tasks = data::build_dataset(cfg, Split::Eval, cfg.noise_kind()?)?;
    let metrics = evaluate(&trainer.model, &tasks, "eval", cfg.use_meta, &cfg.acc_thresholds)?;
    Ok(RunRecord::new(preset, label, cfg.master_seed, metrics))
}

/// Test 2 analogue: meta_on vs meta_off on the held-out categories. The
/// meta_off row is a separate training run with the hypernetwork removed,
/// not a zeroed evaluation of the meta-trained model.
pub fn unseen_categories(
    base: &RunConfig,
    seed: u64,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for (label, use_meta) in [("meta_on", true), ("meta_off", false)] {
        let cfg = RunConfig {
            master_seed: seed,
            use_meta,
            noise: "none".into(),
            ..base.clone()
        };
        let rec = train_and_eval(&cfg, "unseen_categories", label)?;
        progress(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Test 3 analogue: meta_on vs meta_off trained and evaluated under each
/// noise kind.
pub fn noise_robustness(
    base: &RunConfig,
    seed: u64,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for &noise in NOISE_KINDS {
        for (mode, use_meta) in [("meta_on", true), ("meta_off", false)] {
            let cfg = RunConfig {
                master_seed: seed,
                use_meta,
                noise: noise.into(),
                ..base.clone()
            };
            let rec = train_and_eval(&cfg, "noise_robustness", &format!("{noise}/{mode}"))?;
            progress(&rec);
            records.push(rec);
        }
    }
    Ok(records)
}

/// Test 1 analogue: unseen-split metrics across latent sizes v.
pub fn latent_sweep(
    base: &RunConfig,
    seed: u64,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for &v in LATENT_SWEEP_V {
        let cfg = RunConfig {
            master_seed: seed,
            use_meta: true,
            v,
            noise: "none".into(),
            ..base.clone()
        };
        let rec = train_and_eval(&cfg, "latent_sweep", &format!("v={v}"))?;
        progress(&rec);
        records.push(rec);
    }
    Ok(records)
}

/// Seeds each preset runs by default: five for the learning check, three
/// for the heavier noise and sweep presets.
pub fn default_seeds(name: &str) -> &'static [u64] {
    match name {
        "unseen_categories" => &[1, 2, 3, 4, 5],
        _ => &[1, 2, 3],
    }
}

/// Run a named preset for each seed and concatenate the rows.
pub fn run_preset(
    name: &str,
    base: &RunConfig,
    seeds: &[u64],
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for &seed in seeds {
        let mut batch = match name {
            "latent_sweep" => latent_sweep(base, seed, progress)?,
            "unseen_categories" => unseen_categories(base, seed, progress)?,
            "noise_robustness" => noise_robustness(base, seed, progress)?,
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset `{other}`, expected one of {PRESETS:?}"
                )))
            }
        };
        records.append(&mut batch);
    }
    Ok(records)
}
