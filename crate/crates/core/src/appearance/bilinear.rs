//! Four fixed quadrant corners blended with sigmoid-rescaled bilinear weights.

use serde::{Deserialize, Serialize};

use super::{sigmoid, SvfOutput};

pub const DEFAULT_LAMBDA_S: f64 = 5.0;
/// Lower clamp applied to `lambda_s` after every optimizer step.
pub const MIN_LAMBDA_S: f64 = 1e-3;
pub const PARAM_LEN: usize = 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearParams {
    pub corner_colors: [[f64; 3]; 4],
    pub corner_opacities: [f64; 4],
    pub lambda_s: f64,
}

impl BilinearParams {
    pub fn uniform(color: [f64; 3], opacity: f64) -> Self {
        Self {
            corner_colors: [color; 4],
            corner_opacities: [opacity; 4],
            lambda_s: DEFAULT_LAMBDA_S,
        }
    }

    /// Rescaled coordinates `(u', v')`.
    pub fn rescaled(&self, p: [f64; 2]) -> (f64, f64) {
        (sigmoid(self.lambda_s * p[0]), sigmoid(self.lambda_s * p[1]))
    }

    /// Blend weights for corners 0..3 in the order of the quadrant layout.
    pub fn weights(&self, p: [f64; 2]) -> [f64; 4] {
        let (u, v) = self.rescaled(p);
        [(1.0 - u) * (1.0 - v), (1.0 - u) * v, u * (1.0 - v), u * v]
    }

    pub fn eval(&self, p: [f64; 2]) -> SvfOutput {
        let w = self.weights(p);
        let mut rgb = [0.0; 3];
        let mut alpha = 0.0;
        for i in 0..4 {
            for ch in 0..3 {
                rgb[ch] += w[i] * self.corner_colors[i][ch];
            }
            alpha += w[i] * self.corner_opacities[i];
        }
        SvfOutput { rgb, alpha }
    }

    pub fn vjp(&self, p: [f64; 2], d_rgb: [f64; 3], d_alpha: f64, out: &mut [f64]) -> [f64; 2] {
        let (u, v) = self.rescaled(p);
        let w = [(1.0 - u) * (1.0 - v), (1.0 - u) * v, u * (1.0 - v), u * v];
        let mut g = [0.0; 4];
        for i in 0..4 {
            let c = self.corner_colors[i];
            g[i] = c[0] * d_rgb[0] + c[1] * d_rgb[1] + c[2] * d_rgb[2] + self.corner_opacities[i] * d_alpha;
            for ch in 0..3 {
                out[3 * i + ch] += w[i] * d_rgb[ch];
            }
            out[12 + i] += w[i] * d_alpha;
        }
        let d_u = -(1.0 - v) * g[0] - v * g[1] + (1.0 - v) * g[2] + v * g[3];
        let d_v = -(1.0 - u) * g[0] + (1.0 - u) * g[1] - u * g[2] + u * g[3];
        let su = u * (1.0 - u);
        let sv = v * (1.0 - v);
        out[16] += d_u * su * p[0] + d_v * sv * p[1];
        [d_u * su * self.lambda_s, d_v * sv * self.lambda_s]
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        for c in &self.corner_colors {
            out.extend_from_slice(c);
        }
        out.extend_from_slice(&self.corner_opacities);
        out.push(self.lambda_s);
    }

    pub(crate) fn read_flat(&mut self, src: &[f64]) {
        for i in 0..4 {
            self.corner_colors[i].copy_from_slice(&src[3 * i..3 * i + 3]);
        }
        self.corner_opacities.copy_from_slice(&src[12..16]);
        self.lambda_s = src[16];
    }
}
