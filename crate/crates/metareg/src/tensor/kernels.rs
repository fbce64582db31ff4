//! Row-major f64 matrix kernels. Each output element is accumulated in a
//! fixed order regardless of tiling or thread count, so the parallel and
//! sequential paths are bit-identical.

use crate::par;

/// Rows below this stay sequential; the per-task dispatch overhead dominates.
const PAR_MIN_ROWS: usize = 512;
const PAR_CHUNK: usize = 128;

/// `c[n,m] = a[n,k] * b[k,m]`
pub fn mm_nn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    let rows = |i0: usize, chunk: &mut [f64]| {
        let rows = chunk.len() / m;
        let mut i = 0;
        while i + 4 <= rows {
            nn_rows::<4, false>(a, b, &mut chunk[i * m..(i + 4) * m], i0 + i, k, m);
            i += 4;
        }
        while i < rows {
            nn_rows::<1, false>(a, b, &mut chunk[i * m..(i + 1) * m], i0 + i, k, m);
            i += 1;
        }
    };
    if n >= PAR_MIN_ROWS && par::parallel_enabled() {
        par::for_each_row_chunk(c, m, PAR_CHUNK, rows);
    } else {
        rows(0, c);
    }
}

/// `R` output rows starting at absolute row `i0`, register-tiled `J` columns
/// at a time (16 then 8 then a scalar tail). Per element the sum still runs
/// over `k` in increasing order.
#[inline]
fn nn_rows<const R: usize, const ACC: bool>(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    i0: usize,
    k: usize,
    m: usize,
) {
    let mut j0 = 0;
    while j0 + 16 <= m {
        nn_tile::<R, 16, ACC>(a, b, out, i0, k, m, j0);
        j0 += 16;
    }
    if j0 + 8 <= m {
        nn_tile::<R, 8, ACC>(a, b, out, i0, k, m, j0);
        j0 += 8;
    }
    if j0 < m {
        let w = m - j0;
        let mut acc = [[0.0f64; 8]; R];
        for kk in 0..k {
            let bk = &b[kk * m + j0..kk * m + j0 + w];
            for r in 0..R {
                let aik = a[(i0 + r) * k + kk];
                for (j, &bv) in bk.iter().enumerate() {
                    acc[r][j] = aik.mul_add(bv, acc[r][j]);
                }
            }
        }
        for r in 0..R {
            let dst = &mut out[r * m + j0..r * m + j0 + w];
            if ACC {
                for j in 0..w {
                    dst[j] += acc[r][j];
                }
            } else {
                dst.copy_from_slice(&acc[r][..w]);
            }
        }
    }
}

/// One `R x J` register tile of the rank-1 update loop.
#[inline(always)]
fn nn_tile<const R: usize, const J: usize, const ACC: bool>(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    i0: usize,
    k: usize,
    m: usize,
    j0: usize,
) {
    let mut acc = [[0.0f64; J]; R];
    for kk in 0..k {
        let bk = &b[kk * m + j0..kk * m + j0 + J];
        for r in 0..R {
            let aik = a[(i0 + r) * k + kk];
            for j in 0..J {
                acc[r][j] = aik.mul_add(bk[j], acc[r][j]);
            }
        }
    }
    for r in 0..R {
        let dst = &mut out[r * m + j0..r * m + j0 + J];
        if ACC {
            for j in 0..J {
                dst[j] += acc[r][j];
            }
        } else {
            dst.copy_from_slice(&acc[r]);
        }
    }
}

/// `da[n,k] += dc[n,m] * b[k,m]^T`
///
/// Transposes `b` up front (it is a weight matrix, small next to `dc`) so the
/// inner loops run the same contiguous rank-1 tile as the forward kernel.
pub fn mm_nt_acc(dc: &[f64], b: &[f64], da: &mut [f64], n: usize, m: usize, k: usize) {
    debug_assert_eq!(dc.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(da.len(), n * k);
    if n < 32 {
        // Too few rows to amortize a transpose of b; the rows of b are
        // already contiguous in this orientation, so use plain dot products.
        for i in 0..n {
            let dcrow = &dc[i * m..(i + 1) * m];
            for kk in 0..k {
                let brow = &b[kk * m..(kk + 1) * m];
                let mut acc = [0.0f64; 4];
                let quads = m / 4;
                for q in 0..quads {
                    for l in 0..4 {
                        acc[l] = dcrow[q * 4 + l].mul_add(brow[q * 4 + l], acc[l]);
                    }
                }
                let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                for j in quads * 4..m {
                    s = dcrow[j].mul_add(brow[j], s);
                }
                da[i * k + kk] += s;
            }
        }
        return;
    }
    let mut bt = vec![0.0; m * k];
    for kk in 0..k {
        for j in 0..m {
            bt[j * k + kk] = b[kk * m + j];
        }
    }
    let rows = |i0: usize, chunk: &mut [f64]| {
        let rows = chunk.len() / k;
        let mut i = 0;
        while i + 4 <= rows {
            nn_rows::<4, true>(dc, &bt, &mut chunk[i * k..(i + 4) * k], i0 + i, m, k);
            i += 4;
        }
        while i < rows {
            nn_rows::<1, true>(dc, &bt, &mut chunk[i * k..(i + 1) * k], i0 + i, m, k);
            i += 1;
        }
    };
    if n >= PAR_MIN_ROWS && par::parallel_enabled() {
        par::for_each_row_chunk(da, k, PAR_CHUNK, rows);
    } else {
        rows(0, da);
    }
}

/// `db[k,m] += a[n,k]^T * dc[n,m]`
///
/// The loop nest streams `a` and `dc` once while the `db` chunk stays
/// cache-resident; per element the sum runs over `n` in increasing order.
pub fn mm_tn_acc(a: &[f64], dc: &[f64], db: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(dc.len(), n * m);
    debug_assert_eq!(db.len(), k * m);
    let rows = |kk0: usize, chunk: &mut [f64]| {
        let kk_len = chunk.len() / m;
        let mut i = 0;
        while i + 4 <= n {
            tn_tile::<4>(a, dc, chunk, i, kk0, kk_len, k, m);
            i += 4;
        }
        while i < n {
            tn_tile::<1>(a, dc, chunk, i, kk0, kk_len, k, m);
            i += 1;
        }
    };
    if k >= PAR_MIN_ROWS && par::parallel_enabled() {
        par::for_each_row_chunk(db, m, PAR_CHUNK, rows);
    } else {
        rows(0, db);
    }
}

/// Rank-1 updates from `R` consecutive source rows folded into each `db` row
/// in one load/store, over `i` in increasing order per element.
#[inline(always)]
fn tn_tile<const R: usize>(
    a: &[f64],
    dc: &[f64],
    chunk: &mut [f64],
    i: usize,
    kk0: usize,
    kk_len: usize,
    k: usize,
    m: usize,
) {
    for dk in 0..kk_len {
        let dbrow = &mut chunk[dk * m..(dk + 1) * m];
        let mut av = [0.0f64; R];
        for r in 0..R {
            av[r] = a[(i + r) * k + kk0 + dk];
        }
        for j in 0..m {
            let mut s = dbrow[j];
            for r in 0..R {
                s = av[r].mul_add(dc[(i + r) * m + j], s);
            }
            dbrow[j] = s;
        }
    }
}

/// Plain matmul into a fresh vector (bench/test convenience).
pub fn mm_nt(dc: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut da = vec![0.0; n * k];
    mm_nt_acc(dc, b, &mut da, n, m, k);
    da
}

pub fn mm_tn(a: &[f64], dc: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * m];
    mm_tn_acc(a, dc, &mut db, n, k, m);
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for kk in 0..k {
                    c[i * m + j] = a[i * k + kk].mul_add(b[kk * m + j], c[i * m + j]);
                }
            }
        }
        c
    }

    #[test]
    fn kernels_match_naive() {
        for &(n, k, m) in &[(7usize, 5usize, 3usize), (9, 13, 11), (16, 8, 24), (5, 1, 9)] {
            let a: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.71).cos()).collect();
            let mut c = vec![0.0; n * m];
            mm_nn(&a, &b, &mut c, n, k, m);
            let want = naive(&a, &b, n, k, m);
            for (x, y) in c.iter().zip(&want) {
                // same per-element accumulation order as the naive loop
                assert_eq!(x.to_bits(), y.to_bits());
            }

            // backward kernels against transposed naive products
            let dc: Vec<f64> = (0..n * m).map(|i| (i as f64 * 0.13).sin()).collect();
            let da = mm_nt(&dc, &b, n, m, k);
            let bt: Vec<f64> = {
                let mut t = vec![0.0; m * k];
                for kk in 0..k {
                    for j in 0..m {
                        t[j * k + kk] = b[kk * m + j];
                    }
                }
                t
            };
            let want = naive(&dc, &bt, n, m, k);
            for (x, y) in da.iter().zip(&want) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }

            let db = mm_tn(&a, &dc, n, k, m);
            let at: Vec<f64> = {
                let mut t = vec![0.0; k * n];
                for i in 0..n {
                    for kk in 0..k {
                        t[kk * n + i] = a[i * k + kk];
                    }
                }
                t
            };
            let want = naive(&at, &dc, k, n, m);
            for (x, y) in db.iter().zip(&want) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
