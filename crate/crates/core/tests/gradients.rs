//! Analytic gradients against central finite differences and a plain
//! matrix-product forward oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_policy::gates::Gating;
use sparse_policy::nn::{Activation, Matrix, Network};

const H: f64 = 1e-5;

fn random_arch(rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let depth = rng.random_range(2..=4);
        let sizes: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=12)).collect();
        if sparse_policy::nn::param_count(&sizes) <= 500 {
            return sizes;
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, n: usize) -> Matrix {
    Matrix::from_vec(b, n, (0..b * n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// 0.5 * ||y - t||^2 with y from a fresh forward pass.
fn loss(net: &Network, x: &Matrix, t: &Matrix, gate_seed: Option<u64>) -> f64 {
    let y = match gate_seed {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            net.predict(x, Gating::Sampled(&mut rng)).unwrap()
        }
        None => net.predict(x, Gating::Deterministic).unwrap(),
    };
    y.data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum()
}

fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= 1e-4 * scale.max(1e-3)
}

/// Returns (checked, mismatched) component counts.
fn check_network(net: &mut Network, x: &Matrix, t: &Matrix, gate_seed: Option<u64>) -> (usize, usize) {
    let (y, cache) = match gate_seed {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            net.forward(x, Gating::Sampled(&mut rng)).unwrap()
        }
        None => net.forward(x, Gating::Deterministic).unwrap(),
    };
    let dy = Matrix::from_vec(
        y.rows(),
        y.cols(),
        y.data().iter().zip(t.data()).map(|(a, b)| a - b).collect(),
    )
    .unwrap();
    let grads = net.backward(&cache, &dy).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut checked = 0;
    let mut bad = 0;
    for (slot, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = net.param_slices()[slot][i];
            net.param_slices_mut()[slot][i] = orig + H;
            let plus = loss(net, x, t, gate_seed);
            net.param_slices_mut()[slot][i] = orig - H;
            let minus = loss(net, x, t, gate_seed);
            net.param_slices_mut()[slot][i] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            checked += 1;
            if !close(g[i], numeric) {
                bad += 1;
            }
        }
    }
    (checked, bad)
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut total = 0;
    let mut bad = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = random_arch(&mut rng);
        let act = if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let mut net = Network::mlp(&sizes, act, seed).unwrap();
        // Zero biases behind a dead layer put pre-activations exactly on the relu kink.
        randomize_biases(&mut net, &mut rng);
        let x = random_batch(&mut rng, 3, sizes[0]);
        let t = random_batch(&mut rng, 3, *sizes.last().unwrap());
        let (c, b) = check_network(&mut net, &x, &t, None);
        total += c;
        bad += b;
    }
    assert!(bad == 0, "{bad} of {total} components disagree");
}

#[test]
fn tanh_gradients_match_exactly_everywhere() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let sizes = random_arch(&mut rng);
        let mut net = Network::mlp(&sizes, Activation::Tanh, seed).unwrap();
        let x = random_batch(&mut rng, 2, sizes[0]);
        let t = random_batch(&mut rng, 2, *sizes.last().unwrap());
        let (_, bad) = check_network(&mut net, &x, &t, None);
        assert_eq!(bad, 0, "seed {seed} sizes {sizes:?}");
    }
}

fn randomize_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
}

fn spread_gates(net: &mut Network, rng: &mut ChaCha8Rng) {
    for layer in net.layers_mut() {
        if let Some(gp) = &mut layer.gate {
            for la in &mut gp.log_alpha {
                *la = rng.random_range(-3.0..3.0);
            }
        }
    }
}

#[test]
fn gated_gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let sizes = random_arch(&mut rng);
        let mut net = Network::mlp(&sizes, Activation::Tanh, seed).unwrap().with_gates();
        spread_gates(&mut net, &mut rng);
        let x = random_batch(&mut rng, 2, sizes[0]);
        let t = random_batch(&mut rng, 2, *sizes.last().unwrap());
        // Fixed noise: the same u is replayed for every perturbed evaluation.
        let (c1, bad_sampled) = check_network(&mut net, &x, &t, Some(seed));
        let (c2, bad_det) = check_network(&mut net, &x, &t, None);
        assert!(
            (bad_sampled + bad_det) == 0,
            "seed {seed}: {bad_sampled}+{bad_det} of {} disagree",
            c1 + c2
        );
    }
}

#[test]
fn clamped_gates_have_zero_location_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Network::mlp(&[3, 4, 2], Activation::Tanh, 9).unwrap().with_gates();
    for layer in net.layers_mut() {
        let gp = layer.gate.as_mut().unwrap();
        for (i, la) in gp.log_alpha.iter_mut().enumerate() {
            *la = if i % 2 == 0 { 40.0 } else { -40.0 };
        }
    }
    let x = random_batch(&mut rng, 4, 3);
    let mut noise = ChaCha8Rng::seed_from_u64(1);
    let (y, cache) = net.forward(&x, Gating::Sampled(&mut noise)).unwrap();
    let g = net.backward(&cache, &y).unwrap();
    for lg in &g.layers {
        assert!(lg.log_alpha.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }
}

/// Straight-line triple-loop forward, independent of the library's kernels.
fn oracle_forward(net: &Network, x: &Matrix) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    for layer in net.layers() {
        let w = &layer.weight;
        acts = acts
            .iter()
            .map(|a| {
                (0..w.rows())
                    .map(|o| {
                        let mut s = layer.bias[o];
                        for k in 0..w.cols() {
                            s += w.get(o, k) * a[k];
                        }
                        match layer.activation {
                            Activation::Relu => s.max(0.0),
                            Activation::Tanh => s.tanh(),
                            Activation::Identity => s,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    acts
}

#[test]
fn forward_matches_matrix_product_oracle() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = vec![rng.random_range(1..8), rng.random_range(1..16), rng.random_range(1..16), rng.random_range(1..5)];
        let mut net = Network::mlp(&sizes, Activation::Relu, seed).unwrap();
        randomize_biases(&mut net, &mut rng);
        let x = random_batch(&mut rng, 5, sizes[0]);
        let (y, _) = net.forward(&x, Gating::Deterministic).unwrap();
        let expected = oracle_forward(&net, &x);
        for (i, row) in expected.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((y.get(i, j) - v).abs() <= 1e-12, "seed {seed}");
            }
        }
    }
}

#[test]
fn forward_and_backward_are_deterministic_and_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Network::mlp(&[5, 9, 3], Activation::Relu, 3).unwrap().with_gates();
    let snapshot = net.clone();
    let x = random_batch(&mut rng, 4, 5);
    let run = || {
        let mut g = ChaCha8Rng::seed_from_u64(77);
        let (y, cache) = net.forward(&x, Gating::Sampled(&mut g)).unwrap();
        let grads = net.backward(&cache, &y).unwrap();
        (y, grads)
    };
    let (y1, g1) = run();
    let (y2, g2) = run();
    assert_eq!(y1, y2);
    assert_eq!(g1, g2);
    assert_eq!(net, snapshot);
}

