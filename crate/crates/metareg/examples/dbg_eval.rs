use metareg::config::RunConfig;
use metareg::data::{self, Split};
use metareg::eval::evaluate;
use metareg::model::Model;
use metareg::train::Trainer;
use std::time::Instant;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() {
    // args: seed freeze r2 lr_decay decay_steps lr meta_off(0/1)
    let seed: u64 = arg(1, 1);
    let freeze: f64 = arg(2, 0.3);
    let r2: f64 = arg(3, 4.0);
    let lr_decay: f64 = arg(4, 0.7);
    let decay_steps: u64 = arg(5, 500);
    let lr: f64 = arg(6, 0.001);
    let run_off: u64 = arg(7, 0);
    let cfg = RunConfig {
        master_seed: seed,
        bn_freeze_frac: freeze,
        r2,
        lr_decay,
        decay_steps,
        lr,
        ..RunConfig::default()
    };
    println!(
        "desk run: seed {seed} freeze {freeze} r2 {r2} lr {lr} decay {lr_decay}/{decay_steps}"
    );
    let eval_tasks =
        data::build_dataset(&cfg, Split::Eval, metareg::cloud::NoiseKind::None).unwrap();
    let model = Model::init(cfg.model_hp().unwrap(), cfg.master_seed).unwrap();
    let r0 = evaluate(&model, &eval_tasks, "eval", true, &cfg.acc_thresholds).unwrap();
    println!("untrained unseen EPE {:.4}", r0.epe);

    let t0 = Instant::now();
    let mut t = Trainer::new(cfg.clone()).unwrap();
    for k in 0..4 {
        for _ in 0..500 {
            t.step_once().unwrap();
        }
        let r = evaluate(&t.model, &eval_tasks, "eval", true, &cfg.acc_thresholds).unwrap();
        let rt = evaluate(&t.model, &t.tasks, "train", true, &cfg.acc_thresholds).unwrap();
        println!(
            "meta_on  step {}: unseen EPE {:.4}  ratio {:.3}  train EPE {:.4}  ({:.0}s)",
            (k + 1) * 500,
            r.epe,
            r.epe / r0.epe,
            rt.epe,
            t0.elapsed().as_secs_f64()
        );
    }

    if run_off == 1 {
        let cfg_off = RunConfig {
            use_meta: false,
            ..cfg.clone()
        };
        let t1 = Instant::now();
        let mut toff = Trainer::new(cfg_off.clone()).unwrap();
        for _ in 0..cfg_off.total_steps {
            toff.step_once().unwrap();
        }
        let roff = evaluate(&toff.model, &eval_tasks, "eval", false, &cfg.acc_thresholds).unwrap();
        println!(
            "meta_off step {}: unseen EPE {:.4}  ratio {:.3}  ({:.0}s)",
            cfg_off.total_steps,
            roff.epe,
            roff.epe / r0.epe,
            t1.elapsed().as_secs_f64()
        );
    }
}
