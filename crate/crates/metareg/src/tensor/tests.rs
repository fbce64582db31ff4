use super::*;
use crate::error::Error;

fn approx(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let i = g.constant([2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let v = g.constant([2, 1], vec![3.0, 4.0]);
    let out = g.matmul(i, v).unwrap();
    assert_eq!(g.values(out), &[3.0, 4.0]);
}

#[test]
fn matmul_hand_arithmetic() {
    let mut g = Graph::new();
    let a = g.constant([1, 2], vec![1.0, 2.0]);
    let b = g.constant([2, 1], vec![3.0, 4.0]);
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.values(out), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant([1, 2], vec![1.0, 2.0]);
    let b = g.constant([3, 1], vec![1.0, 2.0, 3.0]);
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![1, 2]);
            assert_eq!(rhs, vec![3, 1]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_wrt_a() {
    // d/dA sum(A*B) with B = [[3],[4]] is [[3,4]].
    let mut store = ParamStore::new();
    store.add("a", [1, 2], vec![0.5, -0.25]);
    let mut g = Graph::new();
    let a = g.param(&store, 0);
    let b = g.constant([2, 1], vec![3.0, 4.0]);
    let c = g.matmul(a, b).unwrap();
    let l = g.sum_all(c);
    let grads = g.backward(l).unwrap().param_grads(&g, &store);
    assert_eq!(grads[0], vec![3.0, 4.0]);
}

#[test]
fn relu_sign_cases_and_gradient() {
    let mut store = ParamStore::new();
    store.add("x", [1, 3], vec![-1.0, 0.0, 2.0]);
    let mut g = Graph::new();
    let x = g.param(&store, 0);
    let y = g.relu(x);
    assert_eq!(g.values(y), &[0.0, 0.0, 2.0]);
    let l = g.sum_all(y);
    let grads = g.backward(l).unwrap().param_grads(&g, &store);
    // gradient at exactly 0 is defined as 0
    assert_eq!(grads[0], vec![0.0, 0.0, 1.0]);
}

#[test]
fn elementwise_add() {
    let mut g = Graph::new();
    let a = g.constant([1, 2], vec![1.0, 2.0]);
    let b = g.constant([1, 2], vec![3.0, 4.0]);
    let c = g.add(a, b).unwrap();
    assert_eq!(g.values(c), &[4.0, 6.0]);
}

#[test]
fn log_domain_error() {
    let mut g = Graph::new();
    let x = g.constant([1, 2], vec![1.0, -0.5]);
    assert!(matches!(g.log(x), Err(Error::Domain { op: "log", .. })));
}

#[test]
fn reduce_max_values_and_argmax() {
    let mut g = Graph::new();
    let x = g.constant([2, 2], vec![1.0, 5.0, 3.0, 2.0]);
    let m = g.reduce_max(x).unwrap();
    assert_eq!(g.values(m), &[3.0, 5.0]);
    assert_eq!(g.argmax_of(m).unwrap(), &[1, 0]);
}

#[test]
fn reduce_max_single_row_ties_to_lowest() {
    let mut g = Graph::new();
    let x = g.constant([1, 2], vec![7.0, 7.0]);
    let m = g.reduce_max(x).unwrap();
    assert_eq!(g.values(m), &[7.0, 7.0]);
    assert_eq!(g.argmax_of(m).unwrap(), &[0, 0]);
}

#[test]
fn reduce_max_backward_routes_to_argmax_only() {
    let mut store = ParamStore::new();
    store.add("x", [2, 2], vec![1.0, 5.0, 3.0, 2.0]);
    let mut g = Graph::new();
    let x = g.param(&store, 0);
    let m = g.reduce_max(x).unwrap();
    let l = g.sum_all(m);
    let grads = g.backward(l).unwrap().param_grads(&g, &store);
    assert_eq!(grads[0], vec![0.0, 1.0, 1.0, 0.0]);
    // exactly one nonzero per column
    for col in 0..2 {
        let nonzero = (0..2).filter(|r| grads[0][r * 2 + col] != 0.0).count();
        assert_eq!(nonzero, 1);
    }
}

#[test]
fn segment_max_rejects_empty_segment() {
    let mut g = Graph::new();
    let x = g.constant([2, 1], vec![1.0, 2.0]);
    assert!(g.segment_max(x, vec![(1, 1)]).is_err());
}

#[test]
fn batch_norm_already_normalized_is_identity() {
    let mut g = Graph::new();
    let mut stats = BnStats::new();
    let bid = stats.add("bn", 1);
    // column mean 0, population variance 1
    let x = g.constant([2, 1], vec![-1.0, 1.0]);
    let sc = g.constant([1, 1], vec![1.0]);
    let sh = g.constant([1, 1], vec![0.0]);
    let y = g
        .batch_norm(x, sc, sh, bid, &stats, BnMode::Train, 1e-12, 0.1)
        .unwrap();
    approx(g.values(y)[0], -1.0, 1e-6);
    approx(g.values(y)[1], 1.0, 1e-6);
}

#[test]
fn batch_norm_column_two_four() {
    // column [2,4]: mean 3, population std 1 -> [-1, 1]
    let mut g = Graph::new();
    let mut stats = BnStats::new();
    let bid = stats.add("bn", 1);
    let x = g.constant([2, 1], vec![2.0, 4.0]);
    let sc = g.constant([1, 1], vec![1.0]);
    let sh = g.constant([1, 1], vec![0.0]);
    let y = g
        .batch_norm(x, sc, sh, bid, &stats, BnMode::Train, 1e-12, 0.1)
        .unwrap();
    approx(g.values(y)[0], -1.0, 1e-6);
    approx(g.values(y)[1], 1.0, 1e-6);
}

#[test]
fn batch_norm_zero_scale_gives_shift() {
    let mut g = Graph::new();
    let mut stats = BnStats::new();
    let bid = stats.add("bn", 2);
    let x = g.constant([3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let sc = g.constant([1, 2], vec![0.0, 0.0]);
    let sh = g.constant([1, 2], vec![0.7, -0.3]);
    let y = g
        .batch_norm(x, sc, sh, bid, &stats, BnMode::Train, 1e-5, 0.1)
        .unwrap();
    for row in g.values(y).chunks(2) {
        assert_eq!(row, &[0.7, -0.3]);
    }
}

#[test]
fn batch_norm_train_needs_two_rows() {
    let mut g = Graph::new();
    let mut stats = BnStats::new();
    let bid = stats.add("bn", 1);
    let x = g.constant([1, 1], vec![2.0]);
    let sc = g.constant([1, 1], vec![1.0]);
    let sh = g.constant([1, 1], vec![0.0]);
    assert!(g
        .batch_norm(x, sc, sh, bid, &stats, BnMode::Train, 1e-5, 0.1)
        .is_err());
}

#[test]
fn batch_norm_records_running_stat_updates() {
    let mut g = Graph::new();
    let mut stats = BnStats::new();
    let bid = stats.add("bn", 1);
    let x = g.constant([2, 1], vec![2.0, 4.0]);
    let sc = g.constant([1, 1], vec![1.0]);
    let sh = g.constant([1, 1], vec![0.0]);
    g.batch_norm(x, sc, sh, bid, &stats, BnMode::Train, 1e-5, 0.5)
        .unwrap();
    let updates = g.take_bn_updates();
    assert_eq!(updates.len(), 1);
    stats.apply_updates(&updates);
    // mean: 0*(1-0.5) + 3*0.5 ; var: 1*(1-0.5) + 1*0.5
    approx(stats.mean[bid][0], 1.5, 1e-12);
    approx(stats.var[bid][0], 1.0, 1e-12);
}

#[test]
fn backward_sum_gives_ones() {
    let mut store = ParamStore::new();
    store.add("x", [1, 3], vec![0.2, 0.4, 0.6]);
    let mut g = Graph::new();
    let x = g.param(&store, 0);
    let l = g.sum_all(x);
    let grads = g.backward(l).unwrap().param_grads(&g, &store);
    assert_eq!(grads[0], vec![1.0, 1.0, 1.0]);
}

#[test]
fn backward_sum_of_squares() {
    let mut store = ParamStore::new();
    store.add("x", [1, 2], vec![1.0, 2.0]);
    let mut g = Graph::new();
    let x = g.param(&store, 0);
    let s = g.square(x);
    let l = g.sum_all(s);
    let grads = g.backward(l).unwrap().param_grads(&g, &store);
    assert_eq!(grads[0], vec![2.0, 4.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut store = ParamStore::new();
    store.add("x", [1, 2], vec![1.0, 2.0]);
    let mut g = Graph::new();
    let x = g.param(&store, 0);
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
}

#[test]
fn unreached_params_get_zero_gradients() {
    let mut store = ParamStore::new();
    store.add("used", [1, 1], vec![2.0]);
    store.add("unused", [1, 2], vec![1.0, 1.0]);
    let mut g = Graph::new();
    let x = g.param(&store, 0);
    let s = g.square(x);
    let l = g.sum_all(s);
    let grads = g.backward(l).unwrap().param_grads(&g, &store);
    assert_eq!(grads[1], vec![0.0, 0.0]);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let a = g.constant([2, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let b = g.constant([2, 2], vec![-0.5, 1.5, 2.5, -3.5]);
        let c = g.matmul(a, b).unwrap();
        let d = g.relu(c);
        let l = g.sum_all(d);
        g.scalar(l).to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn slice_roundtrip_partition() {
    let mut g = Graph::new();
    let flat = g.constant([1, 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let a = g.slice(flat, 0, [2, 2]).unwrap();
    let b = g.slice(flat, 4, [1, 2]).unwrap();
    assert_eq!(g.values(a), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(g.values(b), &[5.0, 6.0]);
}
