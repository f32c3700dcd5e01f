//! Adam with bias correction.
//!
//! Parameters are kept on the f32 grid after every step (see
//! [`snap_to_f32`]) so that checkpoints round-trip bit-exactly, while
//! the moments stay full f64.

use crate::model::{snap_to_f32, ModelParams, ParamGrads};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates, one pair per learnable array, in the
/// same canonical order as [`ModelParams::learnable_slices`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let moments = params
            .learnable_slices()
            .iter()
            .map(|(_, s)| (vec![0.0; s.len()], vec![0.0; s.len()]))
            .collect();
        AdamState { t: 0, moments }
    }
}

/// One Adam update over every learnable array, in place.
pub fn adam_step(params: &mut ModelParams, grads: &ParamGrads, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let g_slices = grads.slices();
    debug_assert_eq!(g_slices.len(), state.moments.len());
    for (((_, p), g), (m, v)) in params
        .learnable_slices_mut()
        .into_iter()
        .zip(g_slices)
        .zip(state.moments.iter_mut())
    {
        debug_assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
    snap_to_f32(params);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainConfig;
    use crate::dataset::Modality;
    use crate::model::init_params;
    use std::collections::BTreeMap;

    fn tiny_params(seed: u64) -> ModelParams {
        let cfg = TrainConfig {
            embedding_dim: 4,
            seed,
            ..Default::default()
        };
        let mut dims = BTreeMap::new();
        dims.insert(Modality::Lyrics, 3);
        dims.insert(Modality::Audio, 2);
        init_params(&cfg, 5, 7, &dims).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = tiny_params(1);
        let before = params.clone();
        let grads = ParamGrads::zeros_like(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01);
        assert_eq!(params, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // θ=0.5, g=0.3, lr=0.001, t=1:
        //   mhat = 0.3, vhat = 0.09,
        //   Δ = lr·0.3/(0.3+1e-8) ≈ 0.001·(1−3.33e-8)
        //   θ' ≈ 0.499000000033
        let mut params = tiny_params(2);
        for (_, s) in params.learnable_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.5);
        }
        let mut grads = ParamGrads::zeros_like(&params);
        for g in grads.slices_mut() {
            g.iter_mut().for_each(|v| *v = 0.3);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.001);
        for (_, s) in params.learnable_slices_mut() {
            for &mut v in s {
                assert!((v - 0.499).abs() < 1e-6, "got {v}");
            }
        }
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut params = tiny_params(3);
            let mut grads = ParamGrads::zeros_like(&params);
            for (gi, g) in grads.slices_mut().into_iter().enumerate() {
                for (i, v) in g.iter_mut().enumerate() {
                    *v = ((gi + 1) * (i + 3)) as f64 * 1e-3;
                }
            }
            let mut state = AdamState::new(&params);
            for _ in 0..5 {
                adam_step(&mut params, &grads, &mut state, 0.01);
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn params_stay_on_f32_grid() {
        let mut params = tiny_params(4);
        let mut grads = ParamGrads::zeros_like(&params);
        for g in grads.slices_mut() {
            g.iter_mut().for_each(|v| *v = 0.017);
        }
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.003);
        for (_, s) in params.learnable_slices_mut() {
            for &mut v in s {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }
}
