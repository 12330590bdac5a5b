//! Adam with L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightDecay {
    /// Classic Adam-L2: `g ← g + wd·θ` before the moment updates.
    #[default]
    Coupled,
    /// AdamW: `θ ← θ − lr·wd·θ`, separate from the adaptive step.
    Decoupled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: WeightDecay,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decay: WeightDecay::Coupled,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::new(0.01, 5e-4)
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure(&mut self, params: &[&mut Parameter]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape().0, p.shape().1)).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::InvalidArgument(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        Ok(())
    }
}

/// One Adam update over `params`, then zeroes their gradients.
///
/// Fails if no parameter received a gradient since the last step.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, config: &AdamConfig) -> Result<()> {
    if !params.iter().any(|p| p.has_grad()) {
        return Err(Error::Train("optimizer step without a preceding backward pass".into()));
    }
    state.ensure(params)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let wd = config.weight_decay;

    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grad = p.grad.data().to_vec();
        let theta = p.value.data_mut();
        for (k, mut g) in grad.into_iter().enumerate() {
            match config.decay {
                WeightDecay::Coupled => g += wd * theta[k],
                WeightDecay::Decoupled => theta[k] -= config.lr * wd * theta[k],
            }
            let mk = &mut m.data_mut()[k];
            *mk = config.beta1 * *mk + (1.0 - config.beta1) * g;
            let vk = &mut v.data_mut()[k];
            *vk = config.beta2 * *vk + (1.0 - config.beta2) * g * g;
            let m_hat = m.data()[k] / bc1;
            let v_hat = v.data()[k] / bc2;
            theta[k] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
        p.zero_grad();
    }
    Ok(())
}
