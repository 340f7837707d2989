use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
}

impl AdamState {
    pub fn zeros_like(param: &Tensor) -> Self {
        AdamState {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    t: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("adam_step", "step index starts at 1"));
    }
    let shape = param.shape();
    if grad.shape() != shape || state.m.shape() != shape || state.v.shape() != shape {
        return Err(Error::shape(
            "adam_step",
            format!(
                "param {shape}, grad {}, m {}, v {}",
                grad.shape(),
                state.m.shape(),
                state.v.shape()
            ),
        ));
    }
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = 1.0 - cfg.beta1.powi(exp);
    let bc2 = 1.0 - cfg.beta2.powi(exp);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
