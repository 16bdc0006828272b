//! Adam (ascent form) and the linear KL-weight schedule.

use crate::error::{Result, VcmError};
use crate::model::{ModelParams, ParamGradients, ParamGroup};

/// `min(beta_cap, iteration / anneal_steps)`; the same value is used for both streams.
pub fn anneal_beta(iteration: u64, anneal_steps: u64, beta_cap: f64) -> f64 {
    assert!(anneal_steps > 0, "anneal_steps must be positive");
    beta_cap.min(iteration as f64 / anneal_steps as f64)
}

/// Bias-corrected Adam moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step that **increases** the objective whose gradient is `grads`.
/// Only groups listed in `groups` are touched (moments included).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGradients,
    state: &mut AdamState,
    lr: f64,
    groups: &[ParamGroup],
) -> Result<()> {
    if let Some(g) = grads.non_finite_group() {
        return Err(VcmError::NonFiniteGradient(g));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for ((((group, p), (_, g)), (_, m)), (_, v)) in tensors {
        if !groups.contains(&group) {
            continue;
        }
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] += lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn arch() -> Architecture {
        Architecture {
            n_items: 4,
            vocab_size: 3,
            latent_dim: 2,
            enc_x_hidden: vec![3],
            dec_x_hidden: vec![],
            enc_y_hidden: vec![],
            dec_y_hidden: vec![],
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_beta(0, 40_000, 0.4), 0.0);
        assert_eq!(anneal_beta(4_000, 40_000, 0.4), 0.1);
        assert_eq!(anneal_beta(40_000, 40_000, 0.4), 0.4);
        assert_eq!(anneal_beta(1_000_000, 40_000, 0.4), 0.4);
        let mut prev = 0.0;
        for t in (0..100_000).step_by(997) {
            let b = anneal_beta(t, 40_000, 0.4);
            assert!(b >= prev && b <= 0.4);
            prev = b;
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = ModelParams::init(&arch(), 1);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut s, 1e-3, &ParamGroup::ALL).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one bias-corrected step, so Δ = lr·g/(|g|+eps).
        let mut p = ModelParams::init(&arch(), 2);
        let before = p.clone();
        let mut g = p.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.fill(0.37);
        }
        let mut s = AdamState::new(&p);
        let lr = 1e-3;
        adam_step(&mut p, &g, &mut s, lr, &ParamGroup::ALL).unwrap();
        let want = lr * 0.37 / (0.37 + 1e-8);
        for ((_, a), (_, b)) in p.tensors().into_iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!(((x - y) - want).abs() < 1e-15, "{}", x - y);
            }
        }
    }

    #[test]
    fn identical_tensors_update_identically() {
        let mut p = ModelParams::init(&arch(), 3);
        p.dec_x.layers[0].bias = vec![0.25; 4];
        let mut g = p.zeros_like();
        g.dec_x.layers[0].bias = vec![0.5, 0.5, 0.5, 0.5];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-2, &ParamGroup::ALL).unwrap();
        let b = &p.dec_x.layers[0].bias;
        assert!(b.iter().all(|v| *v == b[0]));
    }

    #[test]
    fn frozen_groups_are_untouched() {
        let mut p = ModelParams::init(&arch(), 4);
        let before = p.clone();
        let mut g = p.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.fill(1.0);
        }
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-2, &[ParamGroup::EncoderX, ParamGroup::DecoderX]).unwrap();
        assert_eq!(p.enc_y, before.enc_y);
        assert_eq!(p.dec_y, before.dec_y);
        assert_ne!(p.enc_x, before.enc_x);
        assert!(s.m.enc_y.head.bias.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = ModelParams::init(&arch(), 5);
        let mut g = p.zeros_like();
        g.dec_y.layers[0].bias[0] = f64::NAN;
        let mut s = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut s, 1e-3, &ParamGroup::ALL).unwrap_err();
        assert!(err.to_string().contains("theta_y"));
    }
}
