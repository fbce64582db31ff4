use metareg::config::RunConfig;
use metareg::data::{self, Split};
use metareg::model::{ForwardOpts, Model};
use metareg::rng;
use std::time::Instant;

fn main() {
    let cfg = RunConfig { tasks_per_category: 2, ..RunConfig::default() };
    let model = Model::init(cfg.model_hp().unwrap(), cfg.master_seed).unwrap();
    let tasks = data::build_dataset(&cfg, Split::Train, metareg::cloud::NoiseKind::None).unwrap();
    let task = &tasks[0];
    let nbrs = model.task_neighbors(task).unwrap();
    let mut r = rng::rng_from(1);
    // warmup
    let fwd = model.forward_task(task, &nbrs, ForwardOpts::train(), &mut r).unwrap();
    let _ = fwd.graph.backward(fwd.total.unwrap()).unwrap();

    let n = 10;
    let (mut tf, mut tb, mut tp) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let t0 = Instant::now();
        let fwd = model.forward_task(task, &nbrs, ForwardOpts::train(), &mut r).unwrap();
        tf += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let g = fwd.graph.backward(fwd.total.unwrap()).unwrap();
        tb += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let _ = g.param_grads(&fwd.graph, &model.store);
        tp += t0.elapsed().as_secs_f64();
    }
    println!("forward {:.1} ms  backward {:.1} ms  param_grads {:.1} ms",
        tf * 1000.0 / n as f64, tb * 1000.0 / n as f64, tp * 1000.0 / n as f64);
    // prediction-only forward
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = model.forward_task(task, &nbrs, ForwardOpts::eval(), &mut r).unwrap();
    }
    println!("predict-only forward {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    let t0 = Instant::now();
    for _ in 0..n {
        let opts = ForwardOpts { with_losses: false, ..ForwardOpts::train() };
        let _ = model.forward_task(task, &nbrs, opts, &mut r).unwrap();
    }
    println!("train-mode forward, no losses {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = model.task_neighbors(task).unwrap();
    }
    println!("task_neighbors {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}
