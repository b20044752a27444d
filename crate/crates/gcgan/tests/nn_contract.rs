//! Contract tests for the differentiable runtime: finite-difference gradient
//! checks for every layer kind, second-order differentiation through a
//! gradient norm, batch-norm statistics, and shape arithmetic.

use gcgan::nn::gradcheck::{finite_diff_grad, max_rel_err, random_tensor};
use gcgan::nn::graph::{Graph, Var};
use gcgan::nn::layers::{batch_norm_forward, fc_forward, layer_norm_forward, Mode};
use gcgan::nn::tensor::Tensor;
use gcgan::rng::Rng;

const FD_EPS: f64 = 1e-3;
const TOL_F64: f64 = 1e-4;

/// Builds a scalar loss from one varying tensor and checks its analytic
/// gradient against central finite differences.
fn check_grad<F>(build: F, x0: &Tensor<f64>, tol: f64, what: &str)
where
    F: Fn(&mut Graph<f64>, Var) -> Var,
{
    let mut g = Graph::new();
    let x = g.param(x0.clone()).unwrap();
    let loss = build(&mut g, x);
    let grads = g.grad(loss, &[x]).unwrap();
    let analytic = g.value(grads[0].expect("loss must depend on input")).clone();
    let numeric = finite_diff_grad(
        |t| {
            let mut g = Graph::new();
            let x = g.param(t.clone()).unwrap();
            let loss = build(&mut g, x);
            g.value(loss).item()
        },
        x0,
        FD_EPS,
    );
    let err = max_rel_err(&analytic, &numeric);
    assert!(err <= tol, "{what}: rel err {err:.3e} > {tol:.1e}");
}

/// Random linear functional of a tensor: catches transposition mistakes a
/// plain sum would miss.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let c = random_tensor(&mut Rng::new(seed ^ 0xc0ffee), shape);
    let cv = g.input(c).unwrap();
    let prod = g.mul(y, cv).unwrap();
    g.sum_all(prod).unwrap()
}

#[test]
fn grad_check_fully_connected() {
    for point in 0..10 {
        let mut rng = Rng::new(100 + point);
        let x0 = random_tensor(&mut rng, vec![3, 6]);
        let w0 = random_tensor(&mut rng, vec![6, 4]);
        let b0 = random_tensor(&mut rng, vec![4]);
        check_grad(
            |g, x| {
                let w = g.input(w0.clone()).unwrap();
                let b = g.input(b0.clone()).unwrap();
                let y = fc_forward(g, x, w, b).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "fc wrt x",
        );
        check_grad(
            |g, w| {
                let x = g.input(x0.clone()).unwrap();
                let b = g.input(b0.clone()).unwrap();
                let y = fc_forward(g, x, w, b).unwrap();
                weighted_sum(g, y, point)
            },
            &w0,
            TOL_F64,
            "fc wrt w",
        );
        check_grad(
            |g, b| {
                let x = g.input(x0.clone()).unwrap();
                let w = g.input(w0.clone()).unwrap();
                let y = fc_forward(g, x, w, b).unwrap();
                weighted_sum(g, y, point)
            },
            &b0,
            TOL_F64,
            "fc wrt b",
        );
    }
}

#[test]
fn grad_check_conv_both_strides() {
    for point in 0..10 {
        let stride = 1 + (point as usize) % 2;
        let mut rng = Rng::new(200 + point);
        let x0 = random_tensor(&mut rng, vec![2, 2, 6, 6]);
        let w0 = random_tensor(&mut rng, vec![3, 2, 5, 5]);
        check_grad(
            |g, x| {
                let w = g.input(w0.clone()).unwrap();
                let y = g.conv2d(x, w, stride).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "conv wrt x",
        );
        check_grad(
            |g, w| {
                let x = g.input(x0.clone()).unwrap();
                let y = g.conv2d(x, w, stride).unwrap();
                weighted_sum(g, y, point)
            },
            &w0,
            TOL_F64,
            "conv wrt w",
        );
    }
}

#[test]
fn grad_check_deconv() {
    for point in 0..10 {
        let mut rng = Rng::new(300 + point);
        let y0 = random_tensor(&mut rng, vec![2, 3, 3, 3]);
        let w0 = random_tensor(&mut rng, vec![3, 2, 5, 5]);
        check_grad(
            |g, y| {
                let w = g.input(w0.clone()).unwrap();
                let x = g.deconv2d(y, w, 2, (6, 6)).unwrap();
                weighted_sum(g, x, point)
            },
            &y0,
            TOL_F64,
            "deconv wrt input",
        );
        check_grad(
            |g, w| {
                let y = g.input(y0.clone()).unwrap();
                let x = g.deconv2d(y, w, 2, (6, 6)).unwrap();
                weighted_sum(g, x, point)
            },
            &w0,
            TOL_F64,
            "deconv wrt w",
        );
    }
}

#[test]
fn grad_check_batch_norm_train_mode() {
    for point in 0..10 {
        let mut rng = Rng::new(400 + point);
        let x0 = random_tensor(&mut rng, vec![4, 3, 4, 4]);
        let g0 = random_tensor(&mut rng, vec![3]).map(|v| v + 1.5);
        let b0 = random_tensor(&mut rng, vec![3]);
        let rm = Tensor::zeros(vec![1, 3, 1, 1]);
        let rv = Tensor::filled(vec![1, 3, 1, 1], 1.0);
        for target in ["x", "gamma", "beta"] {
            let (t0, _tol) = match target {
                "x" => (x0.clone(), TOL_F64),
                "gamma" => (g0.clone(), TOL_F64),
                _ => (b0.clone(), TOL_F64),
            };
            check_grad(
                |g, t| {
                    let x = if target == "x" {
                        t
                    } else {
                        g.input(x0.clone()).unwrap()
                    };
                    let ga = if target == "gamma" {
                        t
                    } else {
                        g.input(g0.clone()).unwrap()
                    };
                    let be = if target == "beta" {
                        t
                    } else {
                        g.input(b0.clone()).unwrap()
                    };
                    let m = g.input(rm.clone()).unwrap();
                    let v = g.input(rv.clone()).unwrap();
                    let (y, _) = batch_norm_forward(g, x, ga, be, m, v, Mode::Train).unwrap();
                    weighted_sum(g, y, point)
                },
                &t0,
                TOL_F64,
                &format!("batch norm wrt {target}"),
            );
        }
    }
}

#[test]
fn grad_check_layer_norm() {
    for point in 0..10 {
        let mut rng = Rng::new(500 + point);
        let x0 = random_tensor(&mut rng, vec![2, 3, 4, 4]);
        let g0 = random_tensor(&mut rng, vec![3]).map(|v| v + 1.5);
        let b0 = random_tensor(&mut rng, vec![3]);
        check_grad(
            |g, x| {
                let ga = g.input(g0.clone()).unwrap();
                let be = g.input(b0.clone()).unwrap();
                let y = layer_norm_forward(g, x, ga, be).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "layer norm wrt x",
        );
    }
}

#[test]
fn grad_check_activations() {
    // Points are kept away from the relu/lrelu kinks so finite differences
    // are valid; the kink convention itself is unit-tested in the graph.
    for point in 0..10 {
        let mut rng = Rng::new(600 + point);
        let x0 = random_tensor(&mut rng, vec![4, 5]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        check_grad(
            |g, x| {
                let y = g.relu(x).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "relu",
        );
        check_grad(
            |g, x| {
                let y = g.leaky_relu(x, 0.2).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "leaky relu",
        );
        check_grad(
            |g, x| {
                let y = g.tanh(x).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "tanh",
        );
        check_grad(
            |g, x| {
                let y = g.abs(x).unwrap();
                weighted_sum(g, y, point)
            },
            &x0,
            TOL_F64,
            "abs",
        );
    }
}

/// f32 instantiation of the same machinery stays within the looser budget.
#[test]
fn grad_check_f32_composite() {
    let mut rng = Rng::new(7);
    let x64 = random_tensor(&mut rng, vec![2, 2, 4, 4]);
    let w64 = random_tensor(&mut rng, vec![2, 2, 5, 5]);
    let build = |g: &mut Graph<f32>, x: Var, w: Var| -> Var {
        let y = g.conv2d(x, w, 2).unwrap();
        let t = g.tanh(y).unwrap();
        g.sum_all(t).unwrap()
    };
    let mut g32: Graph<f32> = Graph::new();
    let x = g32.param(x64.to_f32()).unwrap();
    let w = g32.input(w64.to_f32()).unwrap();
    let loss = build(&mut g32, x, w);
    let gx = g32.grad(loss, &[x]).unwrap()[0].unwrap();
    let analytic = g32.value(gx).to_f64();
    let numeric = finite_diff_grad(
        |t| {
            let mut g: Graph<f32> = Graph::new();
            let x = g.param(t.to_f32()).unwrap();
            let w = g.input(w64.to_f32()).unwrap();
            let loss = build(&mut g, x, w);
            g.value(loss).item() as f64
        },
        &x64,
        1e-2,
    );
    assert!(max_rel_err(&analytic, &numeric) <= 1e-2);
}

/// Gradient penalty with a linear critic D(x) = w . x: the input gradient is
/// w for every sample, so penalty = (|w| - 1)^2 and d penalty / d w has the
/// closed form 2 (|w| - 1) w / |w|. Differentiating through the recorded
/// gradient must reproduce it.
#[test]
fn gradient_penalty_linear_critic_closed_form() {
    let dim = 6;
    let batch = 4;
    let mut rng = Rng::new(99);
    let w0 = random_tensor(&mut rng, vec![dim, 1]).map(|v| v + 0.3);
    let x0 = random_tensor(&mut rng, vec![batch, dim]);

    let mut g = Graph::new();
    let w = g.param(w0.clone()).unwrap();
    // The interpolate point enters as a grad-receiving leaf so the critic's
    // input gradient can be recorded and differentiated again.
    let x = g.param(x0.clone()).unwrap();
    let score = g.matmul(x, w).unwrap(); // [batch, 1] per-sample critic
    let total = g.sum_all(score).unwrap();
    // Samples are independent, so grad of the summed score w.r.t. x holds
    // each sample's own input gradient.
    let gx = g.grad(total, &[x]).unwrap()[0].unwrap();
    let sq = g.mul(gx, gx).unwrap();
    let row_sq = g.reduce_sum(sq, &[1]).unwrap();
    let eps_guard = g.add_scalar(row_sq, 1e-12).unwrap();
    let norm = g.sqrt(eps_guard).unwrap();
    let shifted = g.add_scalar(norm, -1.0).unwrap();
    let pen = g.mul(shifted, shifted).unwrap();
    let gp = g.mean_all(pen).unwrap();

    let wnorm = (w0.data().iter().map(|v| v * v).sum::<f64>()).sqrt();
    let expect_gp = (wnorm - 1.0) * (wnorm - 1.0);
    assert!((g.value(gp).item() - expect_gp).abs() < 1e-9);

    let gw = g.grad(gp, &[w]).unwrap()[0].expect("penalty depends on w");
    let analytic = g.value(gw).clone();
    for i in 0..dim {
        let closed = 2.0 * (wnorm - 1.0) * w0.data()[i] / wnorm;
        assert!(
            (analytic.data()[i] - closed).abs() <= 1e-5,
            "component {i}: {} vs closed form {closed}",
            analytic.data()[i]
        );
    }
}

/// Same penalty pathway but through a conv critic, checked against finite
/// differences: exercises conv double-backward end to end.
#[test]
fn gradient_penalty_conv_critic_finite_difference() {
    let mut rng = Rng::new(123);
    let x0 = random_tensor(&mut rng, vec![2, 1, 4, 4]);
    let w0 = random_tensor(&mut rng, vec![1, 1, 5, 5]);
    let gp_of = |w_t: &Tensor<f64>| -> (f64, Option<Tensor<f64>>) {
        let mut g = Graph::new();
        let w = g.param(w_t.clone()).unwrap();
        let x = g.param(x0.clone()).unwrap();
        let y = g.conv2d(x, w, 2).unwrap();
        let total = g.sum_all(y).unwrap();
        let gx = g.grad(total, &[x]).unwrap()[0].unwrap();
        let sq = g.mul(gx, gx).unwrap();
        let row_sq = g.reduce_sum(sq, &[1, 2, 3]).unwrap();
        let guarded = g.add_scalar(row_sq, 1e-12).unwrap();
        let norm = g.sqrt(guarded).unwrap();
        let shifted = g.add_scalar(norm, -1.0).unwrap();
        let pen = g.mul(shifted, shifted).unwrap();
        let gp = g.mean_all(pen).unwrap();
        let grad = g.grad(gp, &[w]).unwrap()[0].map(|v| g.value(v).clone());
        (g.value(gp).item(), grad)
    };
    let (_, grad) = gp_of(&w0);
    let analytic = grad.unwrap();
    let numeric = finite_diff_grad(|t| gp_of(t).0, &w0, FD_EPS);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err <= 1e-5, "conv gp double-backward rel err {err:.3e}");
}

#[test]
fn batch_norm_train_statistics_and_infer_determinism() {
    let mut rng = Rng::new(17);
    let x0 = random_tensor(&mut rng, vec![16, 5]).map(|v| 3.0 * v + 0.7);
    let mut g = Graph::new();
    let x = g.input(x0.clone()).unwrap();
    let gamma = g.input(Tensor::filled(vec![5], 1.0)).unwrap();
    let beta = g.input(Tensor::zeros(vec![5])).unwrap();
    let rm = g.input(Tensor::zeros(vec![1, 5])).unwrap();
    let rv = g.input(Tensor::filled(vec![1, 5], 1.0)).unwrap();
    let (y, stats) = batch_norm_forward(&mut g, x, gamma, beta, rm, rv, Mode::Train).unwrap();
    assert!(stats.is_some());
    let out = g.value(y);
    for c in 0..5 {
        let col: Vec<f64> = (0..16).map(|r| out.data()[r * 5 + c]).collect();
        let mean = col.iter().sum::<f64>() / 16.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-3, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
    }
    // Infer mode: pure function of input and running stats.
    let run_infer = || {
        let mut g = Graph::new();
        let x = g.input(x0.clone()).unwrap();
        let gamma = g.input(Tensor::filled(vec![5], 1.0)).unwrap();
        let beta = g.input(Tensor::zeros(vec![5])).unwrap();
        let rm = g.input(Tensor::filled(vec![1, 5], 0.25)).unwrap();
        let rv = g.input(Tensor::filled(vec![1, 5], 2.0)).unwrap();
        let (y, stats) = batch_norm_forward(&mut g, x, gamma, beta, rm, rv, Mode::Infer).unwrap();
        assert!(stats.is_none());
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run_infer(), run_infer());
}

#[test]
fn identity_and_tanh_trivial_cases() {
    // No ops applied: the input is returned untouched.
    let mut g: Graph<f32> = Graph::new();
    let x0 = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.5, -0.25]).unwrap();
    let x = g.input(x0.clone()).unwrap();
    assert_eq!(g.value(x), &x0);
    // tanh(0) = 0.
    let z = g.input(Tensor::zeros(vec![4, 4])).unwrap();
    let t = g.tanh(z).unwrap();
    assert!(g.value(t).data().iter().all(|&v| v == 0.0));
}

#[test]
fn fc_batch_shape_136_to_128() {
    let mut rng = Rng::new(5);
    let mut g: Graph<f32> = Graph::new();
    let x = g
        .input(random_tensor(&mut rng, vec![64, 136]).to_f32())
        .unwrap();
    let w = g
        .input(random_tensor(&mut rng, vec![136, 128]).to_f32())
        .unwrap();
    let b = g.input(Tensor::zeros(vec![128])).unwrap();
    let y = fc_forward(&mut g, x, w, b).unwrap();
    assert_eq!(g.shape(y), &[64, 128]);
}

#[test]
fn constant_loss_gives_zero_or_absent_gradient() {
    let mut g: Graph<f64> = Graph::new();
    let p = g.param(Tensor::filled(vec![3], 1.0)).unwrap();
    let c = g.input(Tensor::filled(vec![1], 5.0)).unwrap();
    let loss = g.sum_all(c).unwrap();
    let grads = g.grad(loss, &[p]).unwrap();
    assert!(grads[0].is_none());
}
