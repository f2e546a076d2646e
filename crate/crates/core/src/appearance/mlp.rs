//! A tiny per-surfel dense network `2 -> H -> H -> 4` with sigmoid hidden
//! activations and a linear output (three color deltas and one opacity).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, SvfOutput};

pub const DEFAULT_HIDDEN: usize = 4;
/// Hidden widths above this are rejected; activations live on the stack.
pub const MAX_HIDDEN: usize = 32;
/// Half-width of the uniform weight initialization range.
pub const INIT_RANGE: f64 = 0.1;

pub const fn param_len(hidden: usize) -> usize {
    2 * hidden + hidden + hidden * hidden + hidden + 4 * hidden + 4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyMlpParams {
    pub hidden: usize,
    /// `hidden x 2`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// `4 x hidden`, row-major.
    pub w3: Vec<f64>,
    pub b3: [f64; 4],
}

impl TinyMlpParams {
    pub fn zeros(hidden: usize) -> Self {
        assert!(
            (1..=MAX_HIDDEN).contains(&hidden),
            "hidden width {hidden} outside 1..={MAX_HIDDEN}"
        );
        Self {
            hidden,
            w1: vec![0.0; 2 * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; 4 * hidden],
            b3: [0.0; 4],
        }
    }

    /// Uniform weights in `[-INIT_RANGE, INIT_RANGE]`, output alpha bias at
    /// `base_opacity`.
    pub fn initial(hidden: usize, base_opacity: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hidden);
        for v in p
            .w1
            .iter_mut()
            .chain(p.b1.iter_mut())
            .chain(p.w2.iter_mut())
            .chain(p.b2.iter_mut())
            .chain(p.w3.iter_mut())
        {
            *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
        p.b3 = [0.0, 0.0, 0.0, base_opacity];
        p
    }

    #[inline]
    fn hidden_layers(&self, p: [f64; 2]) -> ([f64; MAX_HIDDEN], [f64; MAX_HIDDEN]) {
        let h = self.hidden;
        let mut h1 = [0.0; MAX_HIDDEN];
        let mut h2 = [0.0; MAX_HIDDEN];
        for j in 0..h {
            h1[j] = sigmoid(self.w1[2 * j] * p[0] + self.w1[2 * j + 1] * p[1] + self.b1[j]);
        }
        for j in 0..h {
            let row = &self.w2[j * h..(j + 1) * h];
            let z: f64 = row.iter().zip(&h1[..h]).map(|(w, x)| w * x).sum::<f64>() + self.b2[j];
            h2[j] = sigmoid(z);
        }
        (h1, h2)
    }

    #[inline]
    fn output(&self, h2: &[f64]) -> [f64; 4] {
        let h = self.hidden;
        let mut out = self.b3;
        for (m, o) in out.iter_mut().enumerate() {
            let row = &self.w3[m * h..(m + 1) * h];
            *o += row.iter().zip(&h2[..h]).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }

    pub fn eval(&self, p: [f64; 2]) -> SvfOutput {
        let (_, h2) = self.hidden_layers(p);
        let o = self.output(&h2);
        SvfOutput {
            rgb: [o[0], o[1], o[2]],
            alpha: o[3],
        }
    }

    pub fn vjp(&self, p: [f64; 2], d_rgb: [f64; 3], d_alpha: f64, out: &mut [f64]) -> [f64; 2] {
        let h = self.hidden;
        let (h1, h2) = self.hidden_layers(p);
        let d_o = [d_rgb[0], d_rgb[1], d_rgb[2], d_alpha];

        let off_b1 = 2 * h;
        let off_w2 = off_b1 + h;
        let off_b2 = off_w2 + h * h;
        let off_w3 = off_b2 + h;
        let off_b3 = off_w3 + 4 * h;

        let mut d_z2 = [0.0; MAX_HIDDEN];
        for k in 0..h {
            let mut d_h = 0.0;
            for m in 0..4 {
                out[off_w3 + m * h + k] += d_o[m] * h2[k];
                d_h += self.w3[m * h + k] * d_o[m];
            }
            d_z2[k] = d_h * h2[k] * (1.0 - h2[k]);
        }
        for m in 0..4 {
            out[off_b3 + m] += d_o[m];
        }

        let mut d_z1 = [0.0; MAX_HIDDEN];
        for j in 0..h {
            out[off_b2 + j] += d_z2[j];
            for k in 0..h {
                out[off_w2 + j * h + k] += d_z2[j] * h1[k];
            }
        }
        for k in 0..h {
            let d_h: f64 = (0..h).map(|j| self.w2[j * h + k] * d_z2[j]).sum();
            d_z1[k] = d_h * h1[k] * (1.0 - h1[k]);
        }

        let mut d_p = [0.0; 2];
        for j in 0..h {
            out[2 * j] += d_z1[j] * p[0];
            out[2 * j + 1] += d_z1[j] * p[1];
            out[off_b1 + j] += d_z1[j];
            d_p[0] += self.w1[2 * j] * d_z1[j];
            d_p[1] += self.w1[2 * j + 1] * d_z1[j];
        }
        d_p
    }

    pub fn param_len(&self) -> usize {
        param_len(self.hidden)
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.w3);
        out.extend_from_slice(&self.b3);
    }

    pub(crate) fn read_flat(&mut self, src: &[f64]) {
        let mut at = 0;
        for part in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3] {
            let n = part.len();
            part.copy_from_slice(&src[at..at + n]);
            at += n;
        }
        self.b3.copy_from_slice(&src[at..at + 4]);
    }
}
