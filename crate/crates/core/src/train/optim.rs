use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 100,
            batch: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// First and second moment buffers, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[Parameter]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// A parameter without a gradient is treated as having a zero gradient.
pub fn adam_step(params: &[Parameter], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim("adam", &[params.len()], &[state.m.len()]));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if m.len() != p.tensor.len() {
            return Err(Error::dim("adam state", p.tensor.shape(), &[m.len()]));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.grad().unwrap_or_else(|| vec![0.0; m.len()]);
        for ((mi, vi), g) in m.iter_mut().zip(v.iter_mut()).zip(&grad) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        }
        apply(&mut p.tensor.data_mut(), m, v, c1, c2, cfg);
    }
    Ok(())
}

fn apply(theta: &mut [f64], m: &[f64], v: &[f64], c1: f64, c2: f64, cfg: &TrainConfig) {
    for ((th, mi), vi) in theta.iter_mut().zip(m).zip(v) {
        *th -= cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ops, Tensor};

    fn param(values: Vec<f64>) -> Parameter {
        let n = values.len();
        Parameter::new("p", Tensor::parameter(&[n], values).unwrap())
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let p = [param(vec![1.0, -2.0, 3.0])];
        let mut state = OptimizerState::new(&p);
        let cfg = TrainConfig::default();
        for _ in 0..5 {
            ops::scale(&ops::sum(&p[0].tensor), 0.0).backward().unwrap();
            adam_step(&p, &mut state, &cfg).unwrap();
            p[0].tensor.zero_grad();
        }
        assert_eq!(p[0].tensor.to_vec(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let p = [param(vec![1.0, 1.0, 1.0])];
        let w = Tensor::new(&[3], vec![3.0, -0.5, 1e-3]).unwrap();
        ops::sum(&ops::mul(&p[0].tensor, &w).unwrap()).backward().unwrap();
        let mut state = OptimizerState::new(&p);
        let cfg = TrainConfig::default();
        adam_step(&p, &mut state, &cfg).unwrap();
        for (theta, g) in p[0].tensor.to_vec().iter().zip(w.to_vec()) {
            // m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
            let expect = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.eps);
            assert!((theta - expect).abs() < 1e-15, "{theta} vs {expect}");
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let p = [param(vec![1.0])];
        let mut state = OptimizerState::new(&p);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let mut reached = None;
        for step in 1..=1000 {
            let x = &p[0].tensor;
            ops::sum(&ops::mul(x, x).unwrap()).backward().unwrap();
            adam_step(&p, &mut state, &cfg).unwrap();
            x.zero_grad();
            if reached.is_none() && x.item().abs() < 1e-3 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "theta = {}", p[0].tensor.item());
        assert!(p[0].tensor.item().abs() < 1e-3);
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let p = [param(vec![1.0, 2.0])];
        let mut state = OptimizerState::new(&[param(vec![1.0])]);
        assert!(adam_step(&p, &mut state, &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
