use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};
use crate::error::{Error, Result};

/// Stochastic gradient descent with optional (Nesterov) momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub nesterov: bool,
    pub dampening: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            nesterov: true,
            dampening: 0.0,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate > 0.0) {
            return Err("sgd.learning_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err("sgd.momentum must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 {
            return Err("sgd.weight_decay must be >= 0".into());
        }
        if self.nesterov && (self.momentum == 0.0 || self.dampening != 0.0) {
            return Err("nesterov momentum needs momentum > 0 and zero dampening".into());
        }
        Ok(())
    }
}

/// Momentum buffers, one per trainable tensor in [`Network::param_slots_mut`] order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f32>>,
}

/// Applies one update at learning rate `lr`.
///
/// Per element: `g += wd * w; v = mu * v + (1 - dampening) * g` (plain `g`
/// on the first step); `step = g + mu * v` (Nesterov) or `v`;
/// `w -= lr * step`. Masked parameters and their velocity stay exactly zero.
pub fn sgd_step(
    network: &mut Network,
    grads: &Gradients,
    config: &SgdConfig,
    lr: f32,
    state: &mut SgdState,
) -> Result<()> {
    let grad_tensors: Vec<_> = grads.layers.iter().flat_map(|g| g.tensors()).collect();
    let slots = network.param_slots_mut();
    if grad_tensors.len() != slots.len() {
        return Err(Error::shape(format!(
            "{} gradient tensors for {} parameter tensors",
            grad_tensors.len(),
            slots.len()
        )));
    }
    let first = state.velocity.is_empty();
    if first {
        state.velocity = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
    }
    if state.velocity.len() != slots.len() {
        return Err(Error::shape("optimizer state does not match the network".to_string()));
    }
    let (mu, damp, wd) = (config.momentum, config.dampening, config.weight_decay);
    for ((slot, g), v) in slots.into_iter().zip(grad_tensors).zip(state.velocity.iter_mut()) {
        if g.len() != slot.values.len() || v.len() != slot.values.len() {
            return Err(Error::shape("gradient does not match parameter".to_string()));
        }
        for (i, (w, &gi)) in slot.values.iter_mut().zip(g.data()).enumerate() {
            let mut d = gi + wd * *w;
            if mu != 0.0 {
                v[i] = if first { d } else { mu * v[i] + (1.0 - damp) * d };
                d = if config.nesterov { d + mu * v[i] } else { v[i] };
            }
            *w -= lr * d;
        }
        if let Some(mask) = slot.mask {
            for ((w, vi), &m) in slot.values.iter_mut().zip(v.iter_mut()).zip(mask.iter()) {
                if m == 0.0 {
                    *w = 0.0;
                    *vi = 0.0;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, LayerGrad};
    use crate::tensor::Tensor;

    fn scalar_net(w: f32) -> Network {
        let mut d = Dense::zeros(1, 1);
        d.weights = Tensor::from_vec(&[1, 1], vec![w]).unwrap();
        Network::new(&[1], vec![Layer::Dense(d)]).unwrap()
    }

    fn grads(g: f32) -> Gradients {
        Gradients {
            loss: 0.0,
            layers: vec![LayerGrad::Dense {
                weights: Tensor::from_vec(&[1, 1], vec![g]).unwrap(),
                bias: Tensor::zeros(&[1]),
            }],
        }
    }

    fn weight(net: &Network) -> f32 {
        match &net.layers()[0] {
            Layer::Dense(d) => d.weights.data()[0],
            _ => unreachable!(),
        }
    }

    fn run(config: &SgdConfig, steps: &[f32]) -> Vec<f32> {
        let mut net = scalar_net(1.0);
        let mut state = SgdState::default();
        steps
            .iter()
            .map(|&g| {
                sgd_step(&mut net, &grads(g), config, config.learning_rate, &mut state).unwrap();
                weight(&net)
            })
            .collect()
    }

    #[test]
    fn nesterov_by_hand() {
        // v1 = 0.5, step 0.5 + 0.45 = 0.95; v2 = 0.95, step 0.5 + 0.855 = 1.355.
        let c = SgdConfig { learning_rate: 0.1, momentum: 0.9, nesterov: true, dampening: 0.0, weight_decay: 0.0 };
        let w = run(&c, &[0.5, 0.5]);
        assert!((w[0] - 0.905).abs() < 1e-6);
        assert!((w[1] - 0.7695).abs() < 1e-6);
    }

    #[test]
    fn plain_momentum_with_decay_and_dampening() {
        // g1 = 1 + 0.5 * 1 = 1.5, v1 = 1.5 (first step undamped), w1 = 1 - 0.15 = 0.85.
        // g2 = 1 + 0.425 = 1.425, v2 = 0.9 * 1.5 + 0.5 * 1.425 = 2.0625, w2 = 0.85 - 0.20625.
        let c = SgdConfig { learning_rate: 0.1, momentum: 0.9, nesterov: false, dampening: 0.5, weight_decay: 0.5 };
        let w = run(&c, &[1.0, 1.0]);
        assert!((w[0] - 0.85).abs() < 1e-6);
        assert!((w[1] - 0.64375).abs() < 1e-6);
    }

    #[test]
    fn masked_weights_and_velocity_stay_zero() {
        let mut net = scalar_net(1.0);
        if let Layer::Dense(d) = &mut net.layers_mut()[0] {
            d.weight_mask.data_mut()[0] = 0.0;
        }
        let mut state = SgdState::default();
        let c = SgdConfig::default();
        for _ in 0..3 {
            sgd_step(&mut net, &grads(2.0), &c, 0.1, &mut state).unwrap();
            assert_eq!(weight(&net), 0.0);
            assert_eq!(state.velocity[0][0], 0.0);
        }
    }

    #[test]
    fn rejects_mismatched_state() {
        let mut net = scalar_net(1.0);
        let mut state = SgdState { velocity: vec![vec![0.0]] };
        assert!(sgd_step(&mut net, &grads(1.0), &SgdConfig::default(), 0.1, &mut state).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        let bad = SgdConfig { dampening: 0.1, ..SgdConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SgdConfig { momentum: 1.0, nesterov: false, ..SgdConfig::default() };
        assert!(bad.validate().is_err());
    }
}
