//! Dense row-major kernels shared by the tensor ops.
//!
//! The hot paths keep a 4x8 register tile of the output row live across the
//! contraction so the compiler can issue independent FMA chains; everything
//! falls back to a simple axpy loop for odd widths.

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if n % 32 == 0 {
        matmul_acc_t32(c, a, b, m, k, n);
    } else {
        matmul_acc_generic(c, a, b, m, k, n);
    }
}

fn matmul_acc_t32(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (tile, c_tile) in c_row.chunks_exact_mut(32).enumerate() {
            let j0 = tile * 32;
            let mut acc = [0.0f64; 32];
            acc.copy_from_slice(c_tile);
            for (kk, &av) in a_row.iter().enumerate() {
                let b_tile = &b[kk * n + j0..kk * n + j0 + 32];
                for t in 0..32 {
                    acc[t] += av * b_tile[t];
                }
            }
            c_tile.copy_from_slice(&acc);
        }
    }
}

fn matmul_acc_generic(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m,n] = a[m,k] * b[k,n], skipping the read of c's previous contents.
pub fn matmul_set(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    if n % 32 == 0 {
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (tile, c_tile) in c_row.chunks_exact_mut(32).enumerate() {
                let j0 = tile * 32;
                let mut acc = [0.0f64; 32];
                for (kk, &av) in a_row.iter().enumerate() {
                    let b_tile = &b[kk * n + j0..kk * n + j0 + 32];
                    for t in 0..32 {
                        acc[t] += av * b_tile[t];
                    }
                }
                c_tile.copy_from_slice(&acc);
            }
        }
    } else {
        c.fill(0.0);
        matmul_acc_generic(c, a, b, m, k, n);
    }
}

/// c[k,n] += a[m,k]^T * b[m,n], i.e. c[kk,j] += sum_r a[r,kk] * b[r,j]
///
/// Transposes `a` into scratch first so the contraction runs on contiguous
/// rows; column-strided accumulation is several times slower here.
pub fn matmul_tn_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut at = vec![0.0; m * k];
    transpose(a, m, k, &mut at);
    matmul_acc(c, &at, b, k, m, n);
}

/// c[m,n] += a'[m,k] * b[k,n] where row i of a' is `a[i*lda + a0 ..][..k]`.
///
/// Lets callers run several shifted-window contractions off one transposed
/// buffer (the conv1d weight gradient does this per kernel offset).
pub fn matmul_acc_lda(
    c: &mut [f64],
    a: &[f64],
    lda: usize,
    a0: usize,
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert!((m - 1) * lda + a0 + k <= a.len());
    if n % 32 == 0 {
        for i in 0..m {
            let a_row = &a[i * lda + a0..i * lda + a0 + k];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (tile, c_tile) in c_row.chunks_exact_mut(32).enumerate() {
                let j0 = tile * 32;
                let mut acc = [0.0f64; 32];
                acc.copy_from_slice(c_tile);
                for (kk, &av) in a_row.iter().enumerate() {
                    let b_tile = &b[kk * n + j0..kk * n + j0 + 32];
                    for t in 0..32 {
                        acc[t] += av * b_tile[t];
                    }
                }
                c_tile.copy_from_slice(&acc);
            }
        }
    } else {
        for i in 0..m {
            let a_row = &a[i * lda + a0..i * lda + a0 + k];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (kk, &av) in a_row.iter().enumerate() {
                let b_row = &b[kk * n..(kk + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// out[n,m] = src[m,n]^T
pub fn transpose(src: &[f64], m: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(src.len(), m * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &src[i * n..(i + 1) * n];
        for (j, &v) in row.iter().enumerate() {
            out[j * m + i] = v;
        }
    }
}

/// dst += src, elementwise.
pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_hand_example() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        matmul_acc(&mut c, &a, &b, 2, 2, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn tiled_paths_match_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(m, k, n) in &[(5usize, 7usize, 32usize), (3, 2, 64), (4, 33, 96)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c0 = vec![0.5; m * n];
            let mut c1 = c0.clone();
            matmul_acc_generic(&mut c0, &a, &b, m, k, n);
            matmul_acc_t32(&mut c1, &a, &b, m, k, n);
            for (x, y) in c0.iter().zip(c1.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_tn_matches_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for &(m, k, n) in &[(3usize, 2usize, 2usize), (7, 5, 32), (6, 4, 64)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut at = vec![0.0; m * k];
            transpose(&a, m, k, &mut at);
            let mut want = vec![0.0; k * n];
            matmul_acc(&mut want, &at, &b, k, m, n);
            let mut got = vec![0.0; k * n];
            matmul_tn_acc(&mut got, &a, &b, m, k, n);
            for (x, y) in got.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12, "({m},{k},{n})");
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let mut t = vec![0.0; 12];
        transpose(&src, 3, 4, &mut t);
        let mut back = vec![0.0; 12];
        transpose(&t, 4, 3, &mut back);
        assert_eq!(src, back);
    }
}
