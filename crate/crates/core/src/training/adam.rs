use serde::{Deserialize, Serialize};

use crate::appearance::bilinear::MIN_LAMBDA_S;
use crate::appearance::{Appearance, ParamGroup};
use crate::error::{Error, Result};
use crate::renderer::GradientBuffer;
use crate::scene::Scene;

pub const LOG_SCALE_MIN: f64 = -12.0;
pub const LOG_SCALE_MAX: f64 = 6.0;

/// Per-group learning rates. Position rates are in world units and get
/// multiplied by the scene extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub variant_color: f64,
    pub variant_opacity: f64,
    pub kernel_center: f64,
    pub lambda_s: f64,
    pub mlp: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
            opacity: 5e-2,
            variant_color: 2.5e-3,
            variant_opacity: 2.5e-3,
            kernel_center: 2.5e-3,
            lambda_s: 2.5e-3,
            mlp: 2.5e-3,
        }
    }
}

impl LearningRates {
    /// Rates at `iteration`, with the position rate decayed log-linearly
    /// from `position_init` to `position_final` over `total` iterations.
    pub fn at(&self, iteration: usize, total: usize, extent: f64) -> GroupRates {
        let t = if total == 0 {
            0.0
        } else {
            (iteration as f64 / total as f64).clamp(0.0, 1.0)
        };
        let position = (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp() * extent;
        GroupRates {
            rates: self.clone(),
            position,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupRates {
    rates: LearningRates,
    position: f64,
}

impl GroupRates {
    /// Fixed rates; the position rate is used as given.
    pub fn constant(rates: LearningRates) -> Self {
        let position = rates.position_init;
        Self { rates, position }
    }

    pub fn rate(&self, group: ParamGroup) -> f64 {
        let r = &self.rates;
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => r.rotation,
            ParamGroup::Scale => r.scale,
            ParamGroup::ShDc => r.sh_dc,
            ParamGroup::ShRest => r.sh_rest,
            ParamGroup::Opacity => r.opacity,
            ParamGroup::VariantColor => r.variant_color,
            ParamGroup::VariantOpacity => r.variant_opacity,
            ParamGroup::KernelCenter => r.kernel_center,
            ParamGroup::LambdaS => r.lambda_s,
            ParamGroup::Mlp => r.mlp,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(scene: &Scene) -> Self {
        let zeros: Vec<Vec<f64>> = scene.surfels.iter().map(|s| vec![0.0; s.param_len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }

    /// Rebuild the moment arrays after the scene was restructured. `origin[i]`
    /// names the previous index of new surfel `i`, or `None` for a fresh one.
    pub fn remap(&mut self, origin: &[Option<usize>], scene: &Scene) {
        let take = |old: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            origin
                .iter()
                .zip(&scene.surfels)
                .map(|(o, s)| match o {
                    Some(i) => old[*i].clone(),
                    None => vec![0.0; s.param_len()],
                })
                .collect()
        };
        self.first = take(&self.first);
        self.second = take(&self.second);
    }

    /// Zero the moments of every scalar in `group`.
    pub fn reset_group(&mut self, scene: &Scene, group: ParamGroup) {
        for (i, s) in scene.surfels.iter().enumerate() {
            for (j, g) in s.param_groups().into_iter().enumerate() {
                if g == group {
                    self.first[i][j] = 0.0;
                    self.second[i][j] = 0.0;
                }
            }
        }
    }
}

/// One bias-corrected Adam update of every trainable scalar, followed by
/// quaternion renormalization and the parameter clamps.
pub fn adam_step(scene: &mut Scene, grads: &GradientBuffer, state: &mut AdamState, rates: &GroupRates) -> Result<()> {
    if grads.surfels.len() != scene.len() || state.first.len() != scene.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} surfels", scene.len()),
            actual: format!("{} gradients, {} moments", grads.surfels.len(), state.first.len()),
        });
    }
    let flats: Vec<Vec<f64>> = grads.surfels.iter().map(|g| g.to_flat()).collect();
    for (s, g) in scene.surfels.iter().zip(&flats) {
        if g.len() != s.param_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} scalars", s.param_len()),
                actual: format!("{} scalars", g.len()),
            });
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                group: s.param_groups()[j].name(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, surfel) in scene.surfels.iter_mut().enumerate() {
        let groups = surfel.param_groups();
        let mut params = surfel.to_flat();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..params.len() {
            let g = flats[i][j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            params[j] -= rates.rate(groups[j]) * m_hat / (v_hat.sqrt() + state.eps);
        }
        surfel.read_flat(&params);
        surfel.geometry.normalize_rotation();
        for ls in &mut surfel.geometry.log_scale {
            *ls = ls.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
        }
        if let Appearance::Bilinear(b) = &mut surfel.appearance {
            b.lambda_s = b.lambda_s.max(MIN_LAMBDA_S);
        }
    }
    Ok(())
}
