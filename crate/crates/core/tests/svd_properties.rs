use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_policy::gates::Gating;
use sparse_policy::lowrank::{decompose_network, svd, truncate, DEFAULT_TOL};
use sparse_policy::nn::{Activation, Matrix, Network};

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix {
    Matrix::from_vec(m, n, (0..m * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn orthonormal_columns(q: &Matrix) -> f64 {
    let qtq = q.transpose().matmul(q).unwrap();
    qtq.sub(&Matrix::identity(q.cols())).unwrap().frobenius_norm()
}

#[test]
fn reconstruction_and_orthogonality_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let (m, n) = if case == 0 {
            (20, 12)
        } else {
            (rng.random_range(1..=40), rng.random_range(1..=40))
        };
        let a = random_matrix(&mut rng, m, n);
        let r = svd(&a, DEFAULT_TOL).unwrap();
        let err = r.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(err <= 1e-8, "case {case} ({m}x{n}) reconstruction {err:e}");
        assert!(orthonormal_columns(&r.u) <= 1e-8, "case {case} U");
        assert!(orthonormal_columns(&r.v) <= 1e-8, "case {case} V");
        assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(r.s.iter().all(|&s| s >= 0.0));
    }
}

#[test]
fn eckart_young_error_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let (m, n) = if case == 0 {
            (10, 8)
        } else {
            (rng.random_range(2..=30), rng.random_range(2..=30))
        };
        let a = random_matrix(&mut rng, m, n);
        let full = svd(&a, DEFAULT_TOL).unwrap();
        for r in 1..=m.min(n) {
            let approx = truncate(&full, r).unwrap().reconstruct();
            let err2 = approx.sub(&a).unwrap().frobenius_norm().powi(2);
            let tail: f64 = full.s[r..].iter().map(|s| s * s).sum();
            assert!((err2 - tail).abs() <= 1e-8, "case {case} rank {r}: {err2} vs {tail}");
        }
    }
}

#[test]
fn rank_deficient_inputs_keep_orthonormal_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let (m, n, k) = (rng.random_range(4..20), rng.random_range(4..20), rng.random_range(1..4));
        let left = random_matrix(&mut rng, m, k);
        let right = random_matrix(&mut rng, k, n);
        let a = left.matmul(&right).unwrap();
        let r = svd(&a, DEFAULT_TOL).unwrap();
        assert!(r.reconstruct().sub(&a).unwrap().frobenius_norm() <= 1e-8);
        assert!(orthonormal_columns(&r.u) <= 1e-8);
        assert!(orthonormal_columns(&r.v) <= 1e-8);
        let numerical_rank = r.s.iter().filter(|&&s| s > 1e-10 * r.s[0]).count();
        assert_eq!(numerical_rank, k);
    }
}

#[test]
fn zeroed_rows_and_columns_bound_the_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for pct in [10usize, 25, 50, 75, 90] {
        for by_rows in [true, false] {
            let (m, n) = (40, 24);
            let mut a = random_matrix(&mut rng, m, n);
            let lines = if by_rows { m } else { n };
            let zeroed = lines * pct / 100;
            for l in 0..zeroed {
                for t in 0..if by_rows { n } else { m } {
                    let (i, j) = if by_rows { (l, t) } else { (t, l) };
                    a.set(i, j, 0.0);
                }
            }
            let r = svd(&a, DEFAULT_TOL).unwrap();
            let numerical_rank = r.s.iter().filter(|&&s| s > 1e-10 * r.s[0]).count();
            let other = if by_rows { n } else { m };
            let bound = (lines - zeroed).min(other);
            assert!(numerical_rank <= bound, "{pct}% rows={by_rows}: {numerical_rank} > {bound}");
            if lines == m.min(n) {
                // Zeroing along the shorter side: min(m, n) * (1 - t / 100).
                assert!(numerical_rank <= m.min(n) - zeroed);
            }
        }
    }
}

#[test]
fn refactoring_a_rank_r_network_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut net = Network::mlp(&[4, 64, 160, 2], Activation::Relu, 12).unwrap();
    let r = 7;
    let once = decompose_network(&net, r).unwrap();
    // Write the rank-r weights back and factor again.
    for (layer, c) in net.layers_mut().iter_mut().zip(&once.layers) {
        layer.weight = c.effective_weight();
    }
    let twice = decompose_network(&net, r).unwrap();
    let x = random_matrix(&mut rng, 16, 4);
    let a = once.forward(&x).unwrap();
    let b = twice.forward(&x).unwrap();
    let c = net.predict(&x, Gating::Deterministic).unwrap();
    assert!(a.sub(&b).unwrap().frobenius_norm() < 1e-10);
    assert!(a.sub(&c).unwrap().frobenius_norm() < 1e-10);
}
