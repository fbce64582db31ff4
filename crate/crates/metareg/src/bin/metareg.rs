//! Command-line front end: dataset generation, training, evaluation,
//! experiment presets, and the gradient-check suite.
//!
//! Exit codes: 0 success, 1 validation/usage error (bad flags, bad config,
//! missing input files, failing gradcheck), 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metareg::cloud::io as cloud_io;
use metareg::config::RunConfig;
use metareg::data::{self, Split};
use metareg::error::{Error, Result};
use metareg::eval::evaluate;
use metareg::model::Model;
use metareg::report::{self, RunRecord};
use metareg::train::Trainer;
use metareg::{checkpoint, experiments, model};

#[derive(Parser)]
#[command(name = "metareg", version, about = "Meta-learned point cloud registration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/ and eval/ datasets from a config
    GenData {
        /// Config file (TOML, RunConfig keys)
        #[arg(long)]
        config: PathBuf,
        /// Output directory; receives train/ and eval/ subdirectories
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints and the config into OUT
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint (config must match)
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a stored dataset
    Eval {
        /// Checkpoint file; expects config.toml next to it
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory containing manifest.json
        #[arg(long)]
        data: PathBuf,
        /// Zero the meta-learner's predicted weights
        #[arg(long)]
        no_meta: bool,
        /// Report path; writes <stem>.json and <stem>.txt
        #[arg(long)]
        report: PathBuf,
    },
    /// Run an experiment preset and write its report into OUT
    Experiment {
        /// One of: latent_sweep, unseen_categories, noise_robustness
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Base config; defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds overriding the preset defaults
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Check autodiff gradients against finite differences
    Gradcheck {
        /// Also check the composed learner + meta-learner stack
        #[arg(long)]
        full: bool,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    if !path.exists() {
        return Err(Error::Usage(format!(
            "config file not found: {}",
            path.display()
        )));
    }
    RunConfig::load(path)
}

/// 1 for errors in the user's inputs, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_)
        | Error::Config(_)
        | Error::Parse { .. }
        | Error::Checkpoint(_)
        | Error::Structural { .. }
        | Error::Precondition { .. } => 1,
        _ => 2,
    }
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let noise = cfg.noise_kind()?;
    for split in [Split::Train, Split::Eval] {
        let tasks = data::build_dataset(&cfg, split, noise)?;
        let dir = out.join(split.label());
        cloud_io::save_dataset(&dir, &tasks, cfg.master_seed)?;
        println!("wrote {} {} tasks to {}", tasks.len(), split.label(), dir.display());
    }
    Ok(())
}

fn train(config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    // keep the exact config next to the checkpoints so `eval` can rebuild
    // the model from a checkpoint path alone
    cfg.save(&out.join("config.toml"))?;
    let mut trainer = match resume {
        Some(ckpt) => {
            if !ckpt.exists() {
                return Err(Error::Usage(format!(
                    "checkpoint not found: {}",
                    ckpt.display()
                )));
            }
            Trainer::resume(cfg.clone(), ckpt)?
        }
        None => Trainer::new(cfg.clone())?,
    };
    let every = cfg.log_every.max(1);
    trainer.run(Some(out), |log| {
        if (log.step + 1) % every == 0 || log.step + 1 == cfg.total_steps {
            println!(
                "step {:>6}  total {:.4}  flow {:.4}  cycle {:.4}  chamfer {:.4}  kl {:.4}  lr {:.6}",
                log.step + 1,
                log.total,
                log.flow,
                log.cycle,
                log.chamfer,
                log.kl,
                log.lr
            );
        }
    })?;
    println!("done: {} steps, checkpoints in {}", cfg.total_steps, out.display());
    Ok(())
}

fn eval_cmd(ckpt: &Path, data: &Path, no_meta: bool, report_path: &Path) -> Result<()> {
    if !ckpt.exists() {
        return Err(Error::Usage(format!(
            "checkpoint not found: {}",
            ckpt.display()
        )));
    }
    let cfg_path = ckpt
        .parent()
        .map(|d| d.join("config.toml"))
        .filter(|p| p.exists())
        .ok_or_else(|| {
            Error::Usage(format!(
                "no config.toml next to {}; `train` writes one into its output directory",
                ckpt.display()
            ))
        })?;
    let cfg = RunConfig::load(&cfg_path)?;
    let mut model = Model::init(cfg.model_hp()?, cfg.master_seed)?;
    let ck = checkpoint::Checkpoint::load(ckpt)?;
    let (_, state) = checkpoint::decode_state(&ck, &mut model.store, &mut model.bn, cfg.adam())?;
    checkpoint::check_fingerprint(cfg.fingerprint(), state.fingerprint)?;
    if state.layout != model.layout {
        return Err(Error::Checkpoint(
            "theta2 partition map differs from the model layout".into(),
        ));
    }
    let (tasks, _) = cloud_io::load_dataset(data)?;
    let metrics = evaluate(&model, &tasks, "eval", !no_meta, &cfg.acc_thresholds)?;
    let record = RunRecord::new("eval", "cli", cfg.master_seed, metrics);
    write_records(report_path, &[record])
}

fn experiment(preset: &str, out: &Path, config: Option<&Path>, seeds: Option<&[u64]>) -> Result<()> {
    let base = match config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let seeds = seeds.unwrap_or_else(|| experiments::default_seeds(preset));
    let records = experiments::run_preset(preset, &base, seeds, &mut |rec| {
        println!(
            "{} seed {} {}: EPE {:.4}",
            rec.preset, rec.seed, rec.label, rec.metrics.epe
        );
    })?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    report::write_report(out, preset, &records)?;
    println!("report: {}", out.join(format!("{preset}.txt")).display());
    Ok(())
}

fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Usage(format!("bad report path: {}", path.display())))?;
    report::write_report(&dir, stem, records)?;
    println!("report: {}", dir.join(format!("{stem}.txt")).display());
    Ok(())
}

fn gradcheck(full: bool) -> Result<bool> {
    let mut reports = metareg::tensor::gradcheck::run_basic_suite(11)?;
    if full {
        reports.push(model::full_stack_check(11)?);
    }
    let mut all_pass = true;
    for r in &reports {
        let verdict = if r.pass() { "pass" } else { "FAIL" };
        println!("{:<28} max rel err {:>10.3e}  {verdict}", r.name, r.max_rel_err);
        all_pass &= r.pass();
    }
    Ok(all_pass)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::GenData { config, out } => gen_data(&config, &out).map(|()| true),
        Cmd::Train {
            config,
            out,
            resume,
        } => train(&config, &out, resume.as_deref()).map(|()| true),
        Cmd::Eval {
            ckpt,
            data,
            no_meta,
            report,
        } => eval_cmd(&ckpt, &data, no_meta, &report).map(|()| true),
        Cmd::Experiment {
            preset,
            out,
            config,
            seeds,
        } => experiment(&preset, &out, config.as_deref(), seeds.as_deref()).map(|()| true),
        Cmd::Gradcheck { full } => gradcheck(full),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap exits 2 on bad flags by default; the interface promises 1
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
