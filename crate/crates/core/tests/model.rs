mod common;

use fedrough_core::model::{axpy, fd_gradient, fd_gradient_fn, Batch, LossModel, Objective, ParamVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// `max_i |a_i - f_i| / max(|a_i|, |f_i|, floor)`.
fn max_component_error(a: &[f64], f: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(f)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences_componentwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    while checked < 200 {
        let input = rng.random_range(1..=5);
        let classes = rng.random_range(2..=4);
        let model = if checked % 2 == 0 {
            LossModel::logistic(input, classes).unwrap()
        } else {
            let hidden = [rng.random_range(1..=5)];
            LossModel::mlp(input, &hidden, classes).unwrap()
        };
        let rows = rng.random_range(1..=6);
        let batch = Batch::new(
            gaussian(&mut rng, rows * input, 1.0),
            (0..rows).map(|_| rng.random_range(0..classes)).collect(),
            input,
        )
        .unwrap();
        let params = ParamVector::from_vec(gaussian(&mut rng, model.param_dim(), 0.5));
        if model.min_hidden_margin(&params, &batch).unwrap() < 1e-3 {
            continue;
        }
        let g = model.grad(&params, &batch).unwrap();
        let fd = fd_gradient(&model, &params, &batch, 1e-5).unwrap();
        let err = max_component_error(g.as_slice(), fd.as_slice(), 1e-4);
        assert!(err < 1e-5, "case {checked}: {err:e}");
        checked += 1;
    }
}

#[test]
fn binary_logistic_gradient_matches_closed_form() {
    // grad_w = X^T (sigmoid(Xw + b) - y) / n, grad_b = mean(sigmoid(Xw + b) - y)
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (n, p) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let x = gaussian(&mut rng, n * p, 1.0);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let model = LossModel::logistic(p, 2).unwrap();
        let params = ParamVector::from_vec(gaussian(&mut rng, p + 1, 1.0));
        let batch = Batch::new(x.clone(), y.clone(), p).unwrap();
        let (w, b) = params.as_slice().split_at(p);
        let mut want = vec![0.0; p + 1];
        for i in 0..n {
            let z: f64 = (0..p).map(|j| x[i * p + j] * w[j]).sum::<f64>() + b[0];
            let r = 1.0 / (1.0 + (-z).exp()) - y[i] as f64;
            for j in 0..p {
                want[j] += x[i * p + j] * r / n as f64;
            }
            want[p] += r / n as f64;
        }
        let got = model.grad(&params, &batch).unwrap();
        assert!(common::max_abs_diff(got.as_slice(), &want) < 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_brute_force_minimizer() {
    // Three samples at x = 1 with labels (1, 1, 0): the loss depends on
    // z = w + b only and is minimised where sigmoid(z) = 2/3.
    let model = LossModel::logistic(1, 2).unwrap();
    let batch = Batch::new(vec![1.0; 3], vec![1, 1, 0], 1).unwrap();
    let loss_at = |z: f64| model.loss(&ParamVector::from_vec(vec![z / 2.0, z / 2.0]), &batch).unwrap();
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let (a, b) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if loss_at(a) < loss_at(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let z = 0.5 * (lo + hi);
    assert!((z - 2f64.ln()).abs() < 1e-6);
    let g = model.grad(&ParamVector::from_vec(vec![z / 2.0, z / 2.0]), &batch).unwrap();
    assert!(g.norm() <= 1e-8, "{}", g.norm());
}

#[test]
fn zero_output_layer_gives_log_classes() {
    let model = LossModel::mlp(3, &[4], 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = model.init_params(&mut rng);
    let (fan_in, fan_out) = model.layer_shapes()[1];
    let start = model.param_dim() - fan_in * fan_out - fan_out;
    params.as_mut_slice()[start..].iter_mut().for_each(|v| *v = 0.0);
    let batch = Batch::new(gaussian(&mut rng, 15, 1.0), vec![0, 3, 9, 4, 7], 3).unwrap();
    let loss = model.loss(&params, &batch).unwrap();
    assert!((loss - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn fd_of_norm_squared() {
    let g = fd_gradient_fn(|w| Ok(w.norm_sq()), &ParamVector::from_vec(vec![1.0, 2.0]), 1e-5).unwrap();
    assert!((g.as_slice()[0] - 2.0).abs() < 1e-8 && (g.as_slice()[1] - 4.0).abs() < 1e-8);
}

fn model_strategy() -> impl Strategy<Value = (LossModel, Vec<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..5, 2usize..5, 1usize..8, any::<bool>(), any::<u64>()).prop_map(|(p, c, n, mlp, seed)| {
        let model = if mlp {
            LossModel::mlp(p, &[3], c).unwrap()
        } else {
            LossModel::logistic(p, c).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = gaussian(&mut rng, model.param_dim(), 1.0);
        let x = gaussian(&mut rng, n * p, 2.0);
        let y = (0..n).map(|_| rng.random_range(0..c)).collect();
        (model, params, x, y)
    })
}

proptest! {
    #[test]
    fn loss_is_finite_nonnegative_and_permutation_invariant(
        (model, params, x, y) in model_strategy(),
        shift in 0usize..8,
    ) {
        let p = model.input_width();
        let n = y.len();
        let params = ParamVector::from_vec(params);
        let loss = model.loss(&params, &Batch::new(x.clone(), y.clone(), p).unwrap()).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).rev().collect();
        let px: Vec<f64> = order.iter().flat_map(|&i| x[i * p..(i + 1) * p].to_vec()).collect();
        let py: Vec<usize> = order.iter().map(|&i| y[i]).collect();
        let permuted = model.loss(&params, &Batch::new(px, py, p).unwrap()).unwrap();
        prop_assert!((loss - permuted).abs() <= 1e-12 * loss.max(1.0));
        let g = model.grad(&params, &Batch::new(x, y, p).unwrap()).unwrap();
        prop_assert_eq!(g.dim(), model.param_dim());
        prop_assert!(g.is_finite());
    }

    #[test]
    fn axpy_round_trip(
        w in prop::collection::vec(-1e3f64..1e3, 1..40),
        seed in any::<u64>(),
        s in -10.0f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = ParamVector::from_vec(gaussian(&mut rng, w.len(), 1.0));
        let w = ParamVector::from_vec(w);
        let back = axpy(&axpy(&w, &d, s).unwrap(), &d, -s).unwrap();
        for (a, b) in back.as_slice().iter().zip(w.as_slice()) {
            // One rounding of w + s d, one of the way back.
            let scale = b.abs().max((s * d.norm()).abs()).max(f64::MIN_POSITIVE);
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * scale);
        }
    }

    #[test]
    fn axpy_zero_step_is_identity(w in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let w = ParamVector::from_vec(w);
        let d = ParamVector::from_vec(vec![1.0; w.dim()]);
        prop_assert_eq!(axpy(&w, &d, 0.0).unwrap(), w);
    }
}
