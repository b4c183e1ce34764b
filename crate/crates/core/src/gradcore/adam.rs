use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.rows(), p.cols());
        Self { step: 0, m: params.iter().map(zeros).collect(), v: params.iter().map(zeros).collect() }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::column(&[1.0, -2.0])];
        let mut state = AdamState::new(&params);
        let zeros = vec![Tensor::zeros(2, 1)];
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..3 {
            adam_step(&mut params, &zeros, &mut state, &cfg).unwrap();
        }
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut params = vec![Tensor::column(&[0.0])];
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::with_lr(0.1);
        adam_step(&mut params, &[Tensor::column(&[1.0])], &mut state, &cfg).unwrap();
        let (m0, v0) = (state.m[0].item(), state.v[0].item());
        adam_step(&mut params, &[Tensor::column(&[0.0])], &mut state, &cfg).unwrap();
        assert!(state.m[0].item() < m0 && state.m[0].item() > 0.0);
        assert!(state.v[0].item() < v0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t=1: m̂ = g, v̂ = g², update = lr·g/(|g|+eps)
        let mut params = vec![Tensor::column(&[0.0, 0.0])];
        let grads = vec![Tensor::column(&[3.0, -0.2])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::with_lr(0.1)).unwrap();
        assert!((params[0].data()[0] + 0.1).abs() < 1e-8);
        assert!((params[0].data()[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut params = vec![Tensor::from_rows(&[[0.1, 0.2], [0.3, -0.4]]).unwrap()];
            let mut state = AdamState::new(&params);
            for k in 0..10 {
                let g = Tensor::from_fn(2, 2, |r, c| ((k + r * 2 + c) as f64).sin());
                adam_step(&mut params, &[g], &mut state, &AdamConfig::with_lr(0.01)).unwrap();
            }
            params
        };
        let (a, b) = (run(), run());
        let bits = |p: &Vec<Tensor>| p[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = vec![Tensor::zeros(2, 1)];
        let mut state = AdamState::new(&params);
        let grads = vec![Tensor::zeros(1, 2)];
        assert!(adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).is_err());
    }
}
