use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
///
/// `θ ← θ - lr·wd·θ - lr·m̂/(√v̂ + ε)`
///
/// A parameter without a gradient is treated as having a zero gradient.
/// All gradients are checked for finiteness before any parameter moves.
pub fn adamw_step(
    params: &mut [Tensor],
    names: &[String],
    state: &mut OptimizerState,
    lr: f64,
    config: &AdamWConfig,
) -> Result<()> {
    if params.len() != state.m.len() || params.len() != names.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} tensors, got {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    for (p, name) in params.iter().zip(names) {
        if let Some(g) = p.grad() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if state.m[i].len() != p.numel() {
            return Err(Error::shape("adamw_step", p.shape(), &[state.m[i].len()]));
        }
        let grad = p.grad().map(<[f64]>::to_vec);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let decay = 1.0 - lr * config.weight_decay;
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta = *theta * decay - lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(Tensor::grad)
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p
                .grad()
                .map(|g| g.iter().map(|x| x * scale).collect::<Vec<_>>())
            {
                p.zero_grad();
                p.accumulate_grad(&g).expect("same length");
            }
        }
    }
    norm
}
