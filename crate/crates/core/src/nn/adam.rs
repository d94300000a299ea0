use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, NetGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adaptive-moment optimizer state for one network. The moments mirror the
/// net's layer shapes; `step` counts applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: NetGrads,
    pub second_moment: NetGrads,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first_moment: NetGrads::zeros_like(net),
            second_moment: NetGrads::zeros_like(net),
        })
    }

    fn congruent(&self, net: &DenseNet, grads: &NetGrads) -> bool {
        let layers = net.layers();
        layers.len() == grads.layers.len()
            && layers.len() == self.first_moment.layers.len()
            && layers.len() == self.second_moment.layers.len()
            && layers.iter().enumerate().all(|(i, l)| {
                let shapes = [
                    grads.layers[i].weights.dim(),
                    self.first_moment.layers[i].weights.dim(),
                    self.second_moment.layers[i].weights.dim(),
                ];
                let biases = [
                    grads.layers[i].bias.len(),
                    self.first_moment.layers[i].bias.len(),
                    self.second_moment.layers[i].bias.len(),
                ];
                shapes.iter().all(|&s| s == l.weights.dim()) && biases.iter().all(|&b| b == l.bias.len())
            })
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn optimizer_step(net: &mut DenseNet, grads: &NetGrads, state: &mut AdamState) -> Result<()> {
    if !state.congruent(net, grads) {
        return Err(Error::Shape(
            "parameters, gradients and optimizer moments are not shape-congruent".into(),
        ));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - beta1.powf(t);
    let correction2 = 1.0 - beta2.powf(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[i];
        let m = &mut state.first_moment.layers[i];
        let v = &mut state.second_moment.layers[i];
        Zip::from(&mut layer.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .and(&g.weights)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}
