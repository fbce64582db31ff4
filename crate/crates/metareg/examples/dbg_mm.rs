use metareg::tensor::kernels::{mm_nn, mm_nt_acc, mm_tn_acc};
use std::time::Instant;

fn bench(name: &str, n: usize, k: usize, m: usize, which: u8) {
    let a = vec![1.1f64; n * k];
    let b = vec![0.9f64; k * m];
    let dc = vec![0.5f64; n * m];
    let mut out = vec![0.0f64; n * m.max(k)];
    let reps = 50;
    let t0 = Instant::now();
    for _ in 0..reps {
        match which {
            0 => mm_nn(&a, &b, &mut out[..n * m], n, k, m),
            1 => mm_nt_acc(&dc, &b, &mut out[..n * k], n, m, k),
            _ => {
                let mut db = vec![0.0f64; k * m];
                mm_tn_acc(&a, &dc, &mut db, n, k, m);
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let gflops = 2.0 * (n * k * m) as f64 / dt / 1e9;
    println!("{name} ({n},{k},{m}): {:.2} ms  {gflops:.1} GFLOPs", dt * 1e3);
}

fn main() {
    bench("mm_nn g2l0", 4096, 73, 64, 0);
    bench("mm_nn g2l1", 4096, 64, 35, 0);
    bench("mm_nn g1l2", 4096, 16, 32, 0);
    bench("mm_nt g2l0", 4096, 73, 64, 1);
    bench("mm_tn g2l0", 4096, 73, 64, 2);
    bench("mm_nt f2", 1, 128, 9734, 1);
    bench("mm_tn f2", 1, 128, 9734, 2);
}
