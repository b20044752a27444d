//! Central finite-difference gradient checking in f64.

use super::tensor::Tensor;

/// Central differences with step `eps` on every coordinate of `x0`.
/// `f` must be a pure function of its input.
pub fn finite_diff_grad<F>(mut f: F, x0: &Tensor<f64>, eps: f64) -> Tensor<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut grad = Tensor::zeros(x0.shape().to_vec());
    for i in 0..x0.len() {
        let mut plus = x0.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x0.clone();
        minus.data_mut()[i] -= eps;
        grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
    }
    grad
}

/// Max |a - n| scaled by the largest gradient magnitude seen.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradcheck shape mismatch");
    let scale = analytic
        .data()
        .iter()
        .chain(numeric.data())
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(1e-8);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (&a, &n)| m.max((a - n).abs()))
        / scale
}

/// Random f64 test tensor in [-1, 1].
pub fn random_tensor(rng: &mut crate::rng::Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn finite_diff_on_quadratic() {
        // f(x) = sum(x^2): grad = 2x.
        let mut rng = Rng::new(1);
        let x = random_tensor(&mut rng, vec![5]);
        let fd = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        let analytic = x.map(|v| 2.0 * v);
        assert!(max_rel_err(&analytic, &fd) < 1e-8);
    }
}
