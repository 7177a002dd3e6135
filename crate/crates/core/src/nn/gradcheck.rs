//! Central finite differences against analytic gradients.

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `(L(θ + ε e_k) − L(θ − ε e_k)) / 2ε` for every coordinate `k`.
/// `params` is restored exactly on return.
pub fn numeric_gradient(params: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64, eps: f64) -> Vec<f64> {
    (0..params.len())
        .map(|k| {
            let orig = params[k];
            params[k] = orig + eps;
            let plus = loss(params);
            params[k] = orig - eps;
            let minus = loss(params);
            params[k] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Max relative error between `analytic` and the finite-difference gradient
/// of `loss` at `params`.
pub fn check_gradient(
    params: &mut [f64],
    loss: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    eps: f64,
) -> f64 {
    let numeric = numeric_gradient(params, loss, eps);
    max_relative_error(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mse_grad, mse_loss};

    /// Linear model `y = W x` under MSE; gradient is `J^T dL/dy`.
    fn linear_case() -> (Vec<f64>, Vec<f64>) {
        let x = [0.5, -1.5, 2.0];
        let target = [0.3, -0.7];
        let w = vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6];
        let predict = |w: &[f64]| -> Vec<f64> {
            (0..2).map(|i| (0..3).map(|j| w[3 * i + j] * x[j]).sum()).collect()
        };
        let dy = mse_grad(&predict(&w), &target).unwrap();
        let grad: Vec<f64> = (0..6).map(|k| dy[k / 3] * x[k % 3]).collect();
        let mut params = w.clone();
        let num = numeric_gradient(&mut params, |w| mse_loss(&predict(w), &target).unwrap(), 1e-5);
        assert_eq!(params, w);
        (grad, num)
    }

    #[test]
    fn exact_on_quadratic() {
        let (grad, num) = linear_case();
        assert!(max_relative_error(&grad, &num) < 1e-9);
    }

    #[test]
    fn detects_corrupted_gradient() {
        let (mut grad, num) = linear_case();
        grad[2] *= 2.0;
        assert!(max_relative_error(&grad, &num) > 0.1);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
    }
}
