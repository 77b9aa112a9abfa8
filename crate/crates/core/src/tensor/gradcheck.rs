//! Central finite-difference verification of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Checks `f` at `x0`, returning the maximum relative error over all
/// elements of the input.
pub fn grad_check<F>(f: F, x0: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = Tensor::parameter(x0.shape(), x0.to_vec())?;
    grad_check_params(|| f(&x), std::slice::from_ref(&x), eps)
}

/// Checks a scalar function of the given trainable tensors. `f` is evaluated
/// once with gradient tracking and then twice per element with that element
/// perturbed in place by ±`eps`. The step actually taken (after rounding) is
/// used as the divisor.
pub fn grad_check_params<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {eps}")));
    }
    for p in params {
        p.zero_grad();
    }
    f()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut worst = 0.0f64;
    for (p, grad) in params.iter().zip(&analytic) {
        for (i, &g) in grad.iter().enumerate() {
            let orig = p.data()[i];
            let plus = orig + eps;
            let minus = orig - eps;
            p.data_mut()[i] = plus;
            let f_plus = f()?.item();
            p.data_mut()[i] = minus;
            let f_minus = f()?.item();
            p.data_mut()[i] = orig;
            let numeric = (f_plus - f_minus) / (plus - minus);
            worst = worst.max(relative_error(g, numeric));
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::super::ops;
    use super::*;

    #[test]
    fn sum_is_exact_on_dyadic_inputs() {
        let x0 = Tensor::new(&[4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let err = grad_check(|x| Ok(ops::sum(x)), &x0, 2f64.powi(-16)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sum_is_near_exact_at_default_step() {
        let x0 = Tensor::new(&[3], vec![0.3, -1.7, 2.9]).unwrap();
        let err = grad_check(|x| Ok(ops::sum(x)), &x0, DEFAULT_EPS).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sigmoid_sum() {
        let x0 = Tensor::new(&[5], vec![-2.0, -0.5, 0.1, 0.7, 3.0]).unwrap();
        let err = grad_check(|x| Ok(ops::sum(&ops::sigmoid(x))), &x0, DEFAULT_EPS).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x0 = Tensor::new(&[1], vec![1.0]).unwrap();
        assert!(grad_check(|x| Ok(ops::sum(x)), &x0, 0.0).is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // x ⊙ detach(x) only back-propagates half of d(x²)/dx
        let x0 = Tensor::new(&[2], vec![0.5, -0.8]).unwrap();
        let err = grad_check(
            |x| {
                let sq = ops::mul(x, &x.detach())?;
                Ok(ops::sum(&sq))
            },
            &x0,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err > 0.1);
    }
}
