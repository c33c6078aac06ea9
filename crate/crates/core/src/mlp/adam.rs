use crate::error::{Error, Result};

use super::MlpNetwork;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 decay: `weight_decay * p` joins the descent gradient
    /// before the moment updates.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update. `Ascent` climbs `grads`; in both
/// directions the decay term pulls parameters toward zero.
pub fn adam_step(
    net: &mut MlpNetwork,
    grads: &[f64],
    state: &mut AdamState,
    direction: Direction,
) -> Result<()> {
    let n = net.num_params();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::Shape(format!(
            "adam step: {} params, {} grads, moments {}/{}",
            n,
            grads.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let sign = match direction {
        Direction::Ascent => -1.0,
        Direction::Descent => 1.0,
    };
    let params = net.params_mut();
    for i in 0..n {
        let g = sign * grads[i] + weight_decay * params[i];
        let m = beta1 * state.first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * state.second_moment[i] + (1.0 - beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}
