use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Tensor};

/// Value returned once the error is negligible next to the signal.
pub const SDR_CAP_DB: f64 = 240.0;

/// Relative error norm below which [`SDR_CAP_DB`] is returned.
const CAP_RATIO: f64 = 1e-12;

fn norm(x: impl Iterator<Item = f64>) -> f64 {
    x.map(|v| v * v).sum::<f64>().sqrt()
}

fn check(reference: &[f64], estimate_len: usize) -> Result<f64> {
    if reference.len() != estimate_len {
        return Err(Error::dim("sdr", &[reference.len()], &[estimate_len]));
    }
    let s = norm(reference.iter().copied());
    if s == 0.0 || !s.is_finite() {
        return Err(Error::Domain("SDR needs a nonzero, finite reference signal".into()));
    }
    Ok(s)
}

/// Signal-to-distortion ratio in dB: `20·log10(‖s‖ / ‖s − ŝ‖)`, capped at
/// [`SDR_CAP_DB`].
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let s = check(reference, estimate.len())?;
    let e = norm(reference.iter().zip(estimate).map(|(a, b)| a - b));
    if e < CAP_RATIO * s {
        return Ok(SDR_CAP_DB);
    }
    Ok(20.0 * (s / e).log10())
}

/// `−sdr(reference, estimate)` as a differentiable scalar. The gradient is
/// zero inside the cap region.
pub fn sdr_loss(reference: &[f64], estimate: &Tensor) -> Result<Tensor> {
    let s = check(reference, estimate.len())?;
    let err: Vec<f64> = estimate.data().iter().zip(reference).map(|(a, b)| a - b).collect();
    let e = norm(err.iter().copied());
    let capped = e < CAP_RATIO * s;
    let value = if capped { -SDR_CAP_DB } else { 20.0 * (e / s).log10() };
    Ok(Tensor::from_op(
        vec![1],
        vec![value],
        vec![estimate.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            if capped {
                return vec![Some(vec![0.0; err.len()])];
            }
            let k = ctx.grad[0] * 20.0 / (LN_10 * e * e);
            vec![Some(err.iter().map(|v| k * v).collect())]
        }),
    ))
}

/// Mean of per-utterance SDR losses.
pub fn batch_sdr_loss(pairs: &[(&[f64], Tensor)]) -> Result<Tensor> {
    let losses = pairs
        .iter()
        .map(|(s, est)| sdr_loss(s, est))
        .collect::<Result<Vec<_>>>()?;
    crate::tensor::ops::mean_of(&losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check, DEFAULT_EPS};

    #[test]
    fn hand_values() {
        let s = [2.0, 0.0, 0.0];
        assert!((sdr(&s, &[1.0, 0.0, 0.0]).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert_eq!(sdr(&s, &[0.0; 3]).unwrap(), 0.0);
        assert_eq!(sdr(&s, &s).unwrap(), SDR_CAP_DB);
    }

    #[test]
    fn errors() {
        assert!(matches!(sdr(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(sdr(&[1.0], &[1.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn loss_value_and_gradient() {
        let s = [0.4, -1.0, 0.3, 0.8];
        let x0 = Tensor::new(&[4], vec![0.1, -0.7, 0.9, 0.2]).unwrap();
        let loss = sdr_loss(&s, &x0).unwrap().item();
        assert!((loss + sdr(&s, &x0.to_vec()).unwrap()).abs() < 1e-12);
        let err = grad_check(|x| sdr_loss(&s, x), &x0, DEFAULT_EPS).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn capped_loss_has_zero_gradient() {
        let s = [1.0, 2.0];
        let x = Tensor::parameter(&[2], s.to_vec()).unwrap();
        let loss = sdr_loss(&s, &x).unwrap();
        assert_eq!(loss.item(), -SDR_CAP_DB);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn batch_loss_is_mean() {
        let a = [1.0, 0.0];
        let b = [0.0, 3.0];
        let ea = Tensor::new(&[2], vec![0.5, 0.0]).unwrap();
        let eb = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let l = batch_sdr_loss(&[(&a[..], ea.clone()), (&b[..], eb.clone())]).unwrap();
        let expect = -(sdr(&a, &ea.to_vec()).unwrap() + sdr(&b, &eb.to_vec()).unwrap()) / 2.0;
        assert!((l.item() - expect).abs() < 1e-12);
    }
}
