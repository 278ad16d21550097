use serde::{Deserialize, Serialize};

use crate::training::params::{ModelParams, TensorRole};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// AdamW-style shrinkage applied outside the adaptive step.
    #[default]
    Decoupled,
    /// `λθ` added to the gradient before the moment updates.
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64, weight_decay: f64, decay_mode: DecayMode) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            learning_rate,
            weight_decay,
            decay_mode,
        }
    }
}

/// One Adam update. Weight decay touches weight matrices only, never biases,
/// layer-norm gains or kernel amplitudes.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);
    let lr = state.learning_rate;
    let wd = state.weight_decay;
    let mode = state.decay_mode;

    let tensors = params.tensors_mut();
    let g = grads.tensors();
    let m = state.first_moment.tensors_mut();
    let v = state.second_moment.tensors_mut();
    for ((((_, role, p), (_, _, g)), (_, _, m)), (_, _, v)) in tensors.into_iter().zip(g).zip(m).zip(v) {
        let decay = role == TensorRole::Weight && wd > 0.0;
        let ps = p.as_mut_slice();
        let ms = m.as_mut_slice();
        let vs = v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            let grad = if decay && mode == DecayMode::L2 {
                gi + wd * ps[i]
            } else {
                gi
            };
            ms[i] = BETA1 * ms[i] + (1.0 - BETA1) * grad;
            vs[i] = BETA2 * vs[i] + (1.0 - BETA2) * grad * grad;
            if decay && mode == DecayMode::Decoupled {
                ps[i] *= 1.0 - lr * wd;
            }
            let m_hat = ms[i] / bias1;
            let v_hat = vs[i] / bias2;
            ps[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::params::ModelConfig;

    fn params() -> ModelParams {
        let mut cfg = ModelConfig::default();
        cfg.encoder.event_dim = 2;
        cfg.encoder.position_dim = 2;
        cfg.encoder.time_dim = 2;
        cfg.encoder.num_frequencies = 1;
        cfg.head.components = 2;
        cfg.head.type_hidden = 2;
        ModelParams::init(&cfg, 2, vec![1.0], 7).unwrap()
    }

    #[test]
    fn zero_gradient_only_decays_weights() {
        let mut p = params();
        let before = p.clone();
        let mut st = OptimizerState::new(&p, 1e-3, 1e-5, DecayMode::Decoupled);
        adam_step(&mut p, &before.zeros_like(), &mut st);
        for ((_, role, a), (_, _, b)) in p.tensors().into_iter().zip(before.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                match role {
                    TensorRole::Weight => assert_eq!(*x, y * (1.0 - 1e-3 * 1e-5)),
                    TensorRole::Other => assert_eq!(x, y),
                }
            }
        }
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        let n = g.num_parameters();
        let flat: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { (i as f64 - 7.5) * 0.01 }).collect();
        g.load_flat(&flat).unwrap();
        let mut st = OptimizerState::new(&p, 1e-3, 0.0, DecayMode::Decoupled);
        adam_step(&mut p, &g, &mut st);
        for ((after, prior), gi) in p.to_flat().iter().zip(before.to_flat()).zip(&flat) {
            // m̂ = g, v̂ = g², step = -lr g / (|g| + ε)
            let expected = prior - 1e-3 * gi / (gi.abs() + EPSILON);
            assert!((after - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_coordinates_update_identically() {
        let mut p = params();
        p.encoder.w_query.fill(0.3);
        p.encoder.w_key.fill(0.3);
        let mut g = p.zeros_like();
        g.encoder.w_query.fill(-0.2);
        g.encoder.w_key.fill(-0.2);
        let mut st = OptimizerState::new(&p, 1e-2, 1e-3, DecayMode::L2);
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut st);
        }
        assert_eq!(p.encoder.w_query, p.encoder.w_key);
    }
}
