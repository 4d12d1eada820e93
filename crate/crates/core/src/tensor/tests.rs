use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::BN_EPS;
use super::*;
use crate::error::Error;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn conv1d_unit_kernel_is_identity() {
    let mut g = Graph::new();
    let x = g.leaf(vec![0.5, -1.0, 2.0, 0.25], &[1, 4, 1], false).unwrap();
    let w = g.leaf(vec![1.0], &[1, 1, 1], false).unwrap();
    let b = g.leaf(vec![0.0], &[1], false).unwrap();
    let y = g.conv1d(x, w, b).unwrap();
    assert_eq!(g.data(y), g.data(x));
}

/// Independent oracle: explicit zero-pad then sliding dot product.
fn conv1d_bruteforce(x: &[f64], l: usize, cin: usize, cout: usize, w: &[f64], k: usize, bias: &[f64]) -> Vec<f64> {
    let padl = (k - 1) / 2;
    let mut out = vec![0.0; l * cout];
    for lo in 0..l {
        for co in 0..cout {
            let mut acc = bias[co];
            for dk in 0..k {
                let src = lo as isize + dk as isize - padl as isize;
                if src >= 0 && (src as usize) < l {
                    for ci in 0..cin {
                        acc += x[src as usize * cin + ci] * w[(dk * cin + ci) * cout + co];
                    }
                }
            }
            out[lo * cout + co] = acc;
        }
    }
    out
}

#[test]
fn conv1d_all_ones_boundary_values() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0; 8], &[1, 8, 1], false).unwrap();
    let w = g.leaf(vec![1.0; 4], &[4, 1, 1], false).unwrap();
    let b = g.leaf(vec![0.0], &[1], false).unwrap();
    let y = g.conv1d(x, w, b).unwrap();
    // Hand-evaluated padded sums with the extra zero on the right.
    assert_eq!(g.data(y), &[3.0, 4.0, 4.0, 4.0, 4.0, 4.0, 3.0, 2.0]);
    let oracle = conv1d_bruteforce(&vec![1.0; 8], 8, 1, 1, &vec![1.0; 4], 4, &[0.0]);
    assert_eq!(g.data(y), &oracle[..]);
}

#[test]
fn conv1d_matches_bruteforce_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(l, cin, cout, k) in &[(7usize, 3usize, 2usize, 4usize), (16, 2, 5, 3), (5, 1, 1, 5)] {
        let xv = rand_vec(&mut rng, l * cin);
        let wv = rand_vec(&mut rng, k * cin * cout);
        let bv = rand_vec(&mut rng, cout);
        let mut g = Graph::new();
        let x = g.leaf(xv.clone(), &[1, l, cin], false).unwrap();
        let w = g.leaf(wv.clone(), &[k, cin, cout], false).unwrap();
        let b = g.leaf(bv.clone(), &[cout], false).unwrap();
        let y = g.conv1d(x, w, b).unwrap();
        let oracle = conv1d_bruteforce(&xv, l, cin, cout, &wv, k, &bv);
        for (a, e) in g.data(y).iter().zip(oracle.iter()) {
            assert_close(*a, *e, 1e-12);
        }
    }
}

#[test]
fn conv1d_preserves_length_for_all_kernel_sizes() {
    for k in 1..=8usize {
        let mut g = Graph::new();
        let x = g.leaf(vec![1.0; 2 * 10 * 3], &[2, 10, 3], false).unwrap();
        let w = g.leaf(vec![0.1; k * 3 * 4], &[k, 3, 4], false).unwrap();
        let b = g.leaf(vec![0.0; 4], &[4], false).unwrap();
        let y = g.conv1d(x, w, b).unwrap();
        assert_eq!(g.shape(y), &[2, 10, 4]);
    }
}

#[test]
fn conv1d_rejects_channel_mismatch() {
    let mut g = Graph::new();
    let x = g.leaf(vec![0.0; 8], &[1, 4, 2], false).unwrap();
    let w = g.leaf(vec![0.0; 3], &[1, 3, 1], false).unwrap();
    let b = g.leaf(vec![0.0], &[1], false).unwrap();
    assert!(matches!(g.conv1d(x, w, b), Err(Error::Shape(_))));
}

#[test]
fn relu_and_tanh_values() {
    let mut g = Graph::new();
    let x = g.leaf(vec![-1.0, 0.0, 2.0], &[3], false).unwrap();
    let y = g.relu(x).unwrap();
    assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
    let z = g.leaf(vec![0.0], &[1], false).unwrap();
    let t = g.tanh(z).unwrap();
    assert_eq!(g.data(t), &[0.0]);
}

#[test]
fn batchnorm_train_normalizes_per_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (bsz, l, c) = (4, 6, 3);
    let xv: Vec<f64> = (0..bsz * l * c).map(|_| rng.gen_range(-2.0..5.0)).collect();
    let mut g = Graph::new();
    let x = g.leaf(xv, &[bsz, l, c], false).unwrap();
    let gamma = g.leaf(vec![1.0; c], &[c], false).unwrap();
    let beta = g.leaf(vec![0.0; c], &[c], false).unwrap();
    let mut stats = BnStats::new(c);
    let y = g.batchnorm1d(x, gamma, beta, BnMode::Train, &mut stats, 0.1).unwrap();
    let n = (bsz * l) as f64;
    for ch in 0..c {
        let vals: Vec<f64> = g.data(y).iter().skip(ch).step_by(c).cloned().collect();
        let mean: f64 = vals.iter().sum::<f64>() / n;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "channel {ch} var {var}");
    }
    // Running stats moved toward the batch statistics.
    assert!(stats.mean.iter().any(|&m| m != 0.0));
}

#[test]
fn batchnorm_affine_parameters_scale_and_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (bsz, l, c) = (2, 50, 2);
    let xv: Vec<f64> = (0..bsz * l * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let x = g.leaf(xv, &[bsz, l, c], false).unwrap();
    let gamma = g.leaf(vec![2.0; c], &[c], false).unwrap();
    let beta = g.leaf(vec![3.0; c], &[c], false).unwrap();
    let mut stats = BnStats::new(c);
    let y = g.batchnorm1d(x, gamma, beta, BnMode::Train, &mut stats, 0.1).unwrap();
    let n = (bsz * l) as f64;
    for ch in 0..c {
        let vals: Vec<f64> = g.data(y).iter().skip(ch).step_by(c).cloned().collect();
        let mean: f64 = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert_close(mean, 3.0, 1e-9);
        assert_close(std, 2.0, 1e-3);
    }
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0, 3.0, 4.0], &[1, 4, 1], false).unwrap();
    let gamma = g.leaf(vec![1.0], &[1], false).unwrap();
    let beta = g.leaf(vec![0.0], &[1], false).unwrap();
    let mut stats = BnStats { mean: vec![2.0], var: vec![4.0] };
    let y = g.batchnorm1d(x, gamma, beta, BnMode::Eval, &mut stats, 0.1).unwrap();
    let invstd = 1.0 / (4.0f64 + BN_EPS).sqrt();
    for (got, want) in g.data(y).iter().zip([-1.0, 0.0, 1.0, 2.0]) {
        assert_close(*got, want * invstd, 1e-12);
    }
    // Eval mode must not touch the running stats.
    assert_eq!(stats.mean, vec![2.0]);
    assert_eq!(stats.var, vec![4.0]);
}

#[test]
fn batchnorm_rejects_single_element_batch_in_train() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0], &[1, 1, 1], false).unwrap();
    let gamma = g.leaf(vec![1.0], &[1], false).unwrap();
    let beta = g.leaf(vec![0.0], &[1], false).unwrap();
    let mut stats = BnStats::new(1);
    let r = g.batchnorm1d(x, gamma, beta, BnMode::Train, &mut stats, 0.1);
    assert!(matches!(r, Err(Error::DegenerateBatch(_))));
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut g = Graph::new();
    let a = g.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2], false).unwrap();
    let eye = g.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2], false).unwrap();
    let y = g.matmul(a, eye).unwrap();
    assert_eq!(g.data(y), g.data(a));
    let b = g.leaf(vec![5.0, 6.0, 7.0, 8.0], &[2, 2], false).unwrap();
    let z = g.matmul(a, b).unwrap();
    assert_eq!(g.data(z), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_batched_matches_per_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let av = rand_vec(&mut rng, 2 * 3 * 4);
    let bv = rand_vec(&mut rng, 2 * 4 * 2);
    let mut g = Graph::new();
    let a = g.leaf(av.clone(), &[2, 3, 4], false).unwrap();
    let b = g.leaf(bv.clone(), &[2, 4, 2], false).unwrap();
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 2]);
    for bi in 0..2 {
        let mut g2 = Graph::new();
        let a2 = g2.leaf(av[bi * 12..(bi + 1) * 12].to_vec(), &[3, 4], false).unwrap();
        let b2 = g2.leaf(bv[bi * 8..(bi + 1) * 8].to_vec(), &[4, 2], false).unwrap();
        let y2 = g2.matmul(a2, b2).unwrap();
        assert_eq!(&g.data(y)[bi * 6..(bi + 1) * 6], g2.data(y2));
    }
}

#[test]
fn transpose_last2_swaps_axes() {
    let mut g = Graph::new();
    let x = g.leaf((0..6).map(|v| v as f64).collect(), &[1, 2, 3], false).unwrap();
    let t = g.transpose_last2(x).unwrap();
    assert_eq!(g.shape(t), &[1, 3, 2]);
    assert_eq!(g.data(t), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
}

#[test]
fn softmax_symmetry_ratios_and_shift_invariance() {
    let mut g = Graph::new();
    let a = g.leaf(vec![0.0, 0.0], &[2], false).unwrap();
    let sa = g.softmax(a, 0).unwrap();
    assert_eq!(g.data(sa), &[0.5, 0.5]);

    let b = g.leaf(vec![1f64.ln(), 2f64.ln(), 3f64.ln()], &[3], false).unwrap();
    let sb = g.softmax(b, 0).unwrap();
    for (got, want) in g.data(sb).iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert_close(*got, want, 1e-12);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xv = rand_vec(&mut rng, 5);
    let shifted: Vec<f64> = xv.iter().map(|v| v + 7.25).collect();
    let x = g.leaf(xv, &[5], false).unwrap();
    let y = g.leaf(shifted, &[5], false).unwrap();
    let sx = g.softmax(x, 0).unwrap();
    let sy = g.softmax(y, 0).unwrap();
    for (a, b) in g.data(sx).iter().zip(g.data(sy).iter()) {
        assert_close(*a, *b, 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one_on_random_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xv = rand_vec(&mut rng, 4 * 6 * 6).iter().map(|v| v * 20.0).collect::<Vec<_>>();
    let mut g = Graph::new();
    let x = g.leaf(xv, &[4, 6, 6], false).unwrap();
    let s = g.softmax(x, 2).unwrap();
    for row in g.data(s).chunks_exact(6) {
        let sum: f64 = row.iter().sum();
        assert_close(sum, 1.0, 1e-9);
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn softmax_non_last_axis_matches_transposed_last_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xv = rand_vec(&mut rng, 3 * 4);
    let mut g = Graph::new();
    let x = g.leaf(xv.clone(), &[3, 4], false).unwrap();
    let s_axis0 = g.softmax(x, 0).unwrap();
    let xt = g.transpose_last2(x).unwrap();
    let st = g.softmax(xt, 1).unwrap();
    let back = g.transpose_last2(st).unwrap();
    for (a, b) in g.data(s_axis0).iter().zip(g.data(back).iter()) {
        assert_close(*a, *b, 1e-12);
    }
}

#[test]
fn acosh_loss_values_and_symmetry() {
    let mut g = Graph::new();
    let p = g.leaf(vec![1.0, 2.0], &[2], false).unwrap();
    let t = g.leaf(vec![1.0, 2.0], &[2], false).unwrap();
    let zero = g.acosh_loss(p, t).unwrap();
    assert_eq!(g.value(zero).unwrap(), 0.0);

    // Single error e = 2: acosh(5) = ln(5 + sqrt(24)).
    let p2 = g.leaf(vec![2.0], &[1], false).unwrap();
    let t2 = g.leaf(vec![0.0], &[1], false).unwrap();
    let l2 = g.acosh_loss(p2, t2).unwrap();
    assert_close(g.value(l2).unwrap(), (5.0 + 24f64.sqrt()).ln(), 1e-12);
    assert_close(g.value(l2).unwrap(), 2.2924, 1e-4);

    // Symmetric in its arguments.
    let l2r = g.acosh_loss(t2, p2).unwrap();
    assert_eq!(g.value(l2).unwrap(), g.value(l2r).unwrap());
}

#[test]
fn cross_entropy_uniform_and_confident_limits() {
    let mut g = Graph::new();
    let logits = g.leaf(vec![0.0; 4], &[1, 4], false).unwrap();
    let onehot = g.leaf(vec![0.0, 1.0, 0.0, 0.0], &[1, 4], false).unwrap();
    let l = g.cross_entropy(logits, onehot).unwrap();
    assert_close(g.value(l).unwrap(), 4f64.ln(), 1e-12);

    let confident = g.leaf(vec![0.0, 200.0, 0.0, 0.0], &[1, 4], false).unwrap();
    let l2 = g.cross_entropy(confident, onehot).unwrap();
    assert!(g.value(l2).unwrap() < 1e-12);
}

#[test]
fn weighted_sum_masks_and_adds() {
    let mut g = Graph::new();
    let a = g.leaf(vec![2.0], &[1], false).unwrap();
    let b = g.leaf(vec![3.0], &[1], false).unwrap();
    let c = g.leaf(vec![5.0], &[1], false).unwrap();
    let first = g.weighted_sum_loss(&[a, b, c], &[1.0, 0.0, 0.0]).unwrap();
    assert_eq!(g.value(first).unwrap(), 2.0);
    let sum = g.weighted_sum_loss(&[a, b, c], &[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(g.value(sum).unwrap(), 10.0);
    assert!(matches!(
        g.weighted_sum_loss(&[a, b], &[1.0]),
        Err(Error::Length { .. })
    ));
}

#[test]
fn backward_sum_of_squares_uses_both_paths() {
    // f(x) = sum(x^2) via x used twice: grad = 2x.
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let row = g.reshape(x, &[1, 2]).unwrap();
    let col = g.reshape(x, &[2, 1]).unwrap();
    let prod = g.matmul(row, col).unwrap();
    let root = g.reshape(prod, &[1]).unwrap();
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_twice_doubles_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(vec![3.0, -1.0], &[2], true).unwrap();
    let s = g.sum_all(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    g.zero_grads();
    assert!(g.grad(x).is_none());
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    assert!(matches!(g.backward(x), Err(Error::Graph(_))));
}

// ---------------------------------------------------------------------------
// Finite-difference checks, one per differentiable op (10 random seeds each).
// ---------------------------------------------------------------------------

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn seeded_params(seed: u64, shapes: &[&[usize]]) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|sh| {
            let n = sh.iter().product();
            (sh.to_vec(), rand_vec(&mut rng, n))
        })
        .collect()
}

#[test]
fn gradcheck_conv1d() {
    for seed in 0..10 {
        let params = seeded_params(100 + seed, &[&[2, 6, 3], &[4, 3, 2], &[2]]);
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let y = g.conv1d(ids[0], ids[1], ids[2])?;
            g.sum_all(y)
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_relu_away_from_kink() {
    for seed in 0..10 {
        let mut params = seeded_params(200 + seed, &[&[3, 5]]);
        for v in &mut params[0].1 {
            // keep |x| >= 0.05 so the central difference never crosses 0
            if v.abs() < 0.05 {
                *v = 0.05 * if *v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let y = g.relu(ids[0])?;
            let t = g.tanh(y)?;
            g.sum_all(t)
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_batchnorm_train() {
    for seed in 0..10 {
        let params = seeded_params(300 + seed, &[&[2, 5, 3], &[3], &[3]]);
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let mut stats = BnStats::new(3);
            let y = g.batchnorm1d(ids[0], ids[1], ids[2], BnMode::Train, &mut stats, 0.1)?;
            let t = g.tanh(y)?;
            g.sum_all(t)
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_dense_and_matmul() {
    for seed in 0..10 {
        let params = seeded_params(400 + seed, &[&[3, 4], &[4, 2], &[2], &[2, 3, 4], &[2, 4, 3]]);
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let d = g.dense(ids[0], ids[1], ids[2])?;
            let m = g.matmul(ids[3], ids[4])?;
            let ms = g.sum_all(m)?;
            let ds = g.sum_all(d)?;
            g.weighted_sum_loss(&[ms, ds], &[1.0, 2.0])
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_softmax_attention_shaped() {
    for seed in 0..10 {
        let params = seeded_params(500 + seed, &[&[2, 4, 3], &[2, 4, 3], &[2, 4, 3]]);
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let kt = g.transpose_last2(ids[1])?;
            let scores = g.matmul(ids[0], kt)?;
            let a = g.softmax(scores, 2)?;
            let combined = g.matmul(a, ids[2])?;
            let t = g.tanh(combined)?;
            g.sum_all(t)
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_acosh_loss_at_reference_errors() {
    for (i, e) in [0.1, 1.0, 3.0].into_iter().enumerate() {
        let params = vec![(vec![2], vec![e, -e]), (vec![2], vec![0.0, 0.0])];
        let rep = grad_check(&params, FD_EPS, |g, ids| g.acosh_loss(ids[0], ids[1])).unwrap();
        assert!(rep.max_rel_err < FD_TOL, "error case {i}: {rep:?}");
    }
}

#[test]
fn scale_and_log_cosh_values() {
    let mut g = Graph::new();
    let x = g.leaf(vec![1.0, -2.0], &[2], false).unwrap();
    let y = g.scale(x, 2.5).unwrap();
    assert_eq!(g.data(y), &[2.5, -5.0]);

    let p = g.leaf(vec![0.0, 1.0], &[2], false).unwrap();
    let t = g.leaf(vec![0.0, 1.0], &[2], false).unwrap();
    let zero = g.log_cosh_loss(p, t).unwrap();
    assert_eq!(g.value(zero).unwrap(), 0.0);
    // ln cosh(2) frozen from direct evaluation
    let p2 = g.leaf(vec![2.0], &[1], false).unwrap();
    let t2 = g.leaf(vec![0.0], &[1], false).unwrap();
    let l = g.log_cosh_loss(p2, t2).unwrap();
    assert_close(g.value(l).unwrap(), 2f64.cosh().ln(), 1e-12);
}

#[test]
fn gradcheck_scale_and_log_cosh() {
    for seed in 0..10 {
        let params = seeded_params(900 + seed, &[&[3, 4], &[3, 4]]);
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let s = g.scale(ids[0], -1.7)?;
            g.log_cosh_loss(s, ids[1])
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_cross_entropy() {
    for seed in 0..10 {
        let mut params = seeded_params(600 + seed, &[&[3, 4]]);
        params.push((vec![3, 4], {
            let mut onehot = vec![0.0; 12];
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            for b in 0..3 {
                onehot[b * 4 + rng.gen_range(0..4)] = 1.0;
            }
            onehot
        }));
        let rep = grad_check(&params[..1], FD_EPS, |g, ids| {
            let oh = g.leaf(params[1].1.clone(), &[3, 4], false)?;
            g.cross_entropy(ids[0], oh)
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}

#[test]
fn gradcheck_weighted_loss_distributes_linearly() {
    for seed in 0..10 {
        let params = seeded_params(800 + seed, &[&[4], &[4], &[2, 3]]);
        let rep = grad_check(&params, FD_EPS, |g, ids| {
            let l1 = g.acosh_loss(ids[0], ids[1])?;
            let sm = g.softmax(ids[2], 1)?;
            let l2 = g.sum_all(sm)?;
            let t = g.tanh(ids[0])?;
            let l3 = g.sum_all(t)?;
            g.weighted_sum_loss(&[l1, l2, l3], &[0.7, 1.3, 0.4])
        })
        .unwrap();
        assert!(rep.max_rel_err < FD_TOL, "seed {seed}: {rep:?}");
    }
}
