//! Adam optimizer over selected parameter groups.

use serde::{Deserialize, Serialize};

use super::network::{ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: ModelParams,
    v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update of the parameters in `groups`; all other
/// parameters are left untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grad: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
    groups: &[ParamGroup],
) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for &g in groups {
        let grads = grad.group_layers(g);
        let ms = state.m.group_layers_mut(g);
        let vs = state.v.group_layers_mut(g);
        let ps = params.group_layers_mut(g);
        for (((p, gr), m), v) in ps.into_iter().zip(grads).zip(ms).zip(vs) {
            let blocks = [
                (&mut p.weight, &gr.weight, &mut m.weight, &mut v.weight),
                (&mut p.bias, &gr.bias, &mut m.bias, &mut v.bias),
            ];
            for (pw, gw, mw, vw) in blocks {
                for i in 0..pw.len() {
                    let gi = gw[i];
                    mw[i] = cfg.beta1 * mw[i] + (1.0 - cfg.beta1) * gi;
                    vw[i] = cfg.beta2 * vw[i] + (1.0 - cfg.beta2) * gi * gi;
                    let mhat = mw[i] / c1;
                    let vhat = vw[i] / c2;
                    pw[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::ModelDims;

    fn dims() -> ModelDims {
        ModelDims {
            input: 3,
            hidden: 4,
            branch_hidden: 2,
            classes: 3,
            branches: 2,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ModelParams::init(dims(), 1);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(
            &mut p,
            &g,
            &mut st,
            &AdamConfig::default(),
            &[ParamGroup::Trunk, ParamGroup::Branch(0)],
        );
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = ModelParams::init(dims(), 2);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.trunk.weight[0] = 0.3;
        g.trunk.weight[1] = -2.0;
        g.group_layers_mut(ParamGroup::Branch(1))[0].bias[0] = 1e-3;
        let cfg = AdamConfig::default();
        adam_step(
            &mut p,
            &g,
            &mut st,
            &cfg,
            &[ParamGroup::Trunk, ParamGroup::Branch(1)],
        );
        // closed form of the first step: lr * g / (|g| + eps)
        for (i, gi) in [(0usize, 0.3f64), (1, -2.0)] {
            let want = before.trunk.weight[i] - cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((p.trunk.weight[i] - want).abs() < 1e-15);
        }
        assert!((p.trunk.weight[0] - before.trunk.weight[0] + 1e-3).abs() < 1e-10);
        assert!((p.trunk.weight[1] - before.trunk.weight[1] - 1e-3).abs() < 1e-10);
        assert_eq!(p.heads[0], before.heads[0]);
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut p = ModelParams::init(dims(), 3);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.trunk.weight.iter_mut().for_each(|v| *v = 1.0);
        adam_step(
            &mut p,
            &g,
            &mut st,
            &AdamConfig::default(),
            &[ParamGroup::Branch(1)],
        );
        assert_eq!(p, before);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = ModelParams::init(dims(), 4);
            let mut st = AdamState::new(&p);
            let mut g = p.zeros_like();
            g.trunk
                .weight
                .iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = (i as f64).sin());
            for _ in 0..5 {
                adam_step(
                    &mut p,
                    &g,
                    &mut st,
                    &AdamConfig::default(),
                    &[ParamGroup::Trunk],
                );
            }
            p
        };
        assert_eq!(run(), run());
    }
}
