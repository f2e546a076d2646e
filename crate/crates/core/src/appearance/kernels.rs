//! Movable kernels: learnable points on the surfel, each carrying a color and
//! an opacity weighted by a distance-decaying kernel.

use serde::{Deserialize, Serialize};

use super::SvfOutput;

pub const DEFAULT_KERNEL_COUNT: usize = 4;
pub const DEFAULT_LAMBDA_E: f64 = 0.1;
/// Scalars per kernel: center (2), color (3), opacity (1).
pub const PARAMS_PER_KERNEL: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelForm {
    /// `exp(-lambda_e * |p - K|^2)`
    Exponential,
    /// `1 - tanh(|p - K|^2)`
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovableKernelParams {
    pub centers: Vec<[f64; 2]>,
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    /// Falloff rate; fixed during optimization.
    pub lambda_e: f64,
    pub form: KernelForm,
}

impl MovableKernelParams {
    /// `k` kernels spread over the quadrant centers `(±0.5, ±0.5)` (cycled
    /// on a growing ring when `k > 4`), zero color, opacity split evenly.
    pub fn initial(k: usize, form: KernelForm, base_opacity: f64) -> Self {
        let quadrants = [[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]];
        let centers = (0..k)
            .map(|i| {
                let ring = 1.0 + (i / 4) as f64;
                let [x, y] = quadrants[i % 4];
                [x * ring, y * ring]
            })
            .collect();
        Self {
            centers,
            colors: vec![[0.0; 3]; k],
            opacities: vec![base_opacity / k as f64; k],
            lambda_e: DEFAULT_LAMBDA_E,
            form,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Kernel weight and its derivative with respect to the squared distance.
    #[inline]
    fn kernel(&self, dist_sq: f64) -> (f64, f64) {
        match self.form {
            KernelForm::Exponential => {
                let w = (-self.lambda_e * dist_sq).exp();
                (w, -self.lambda_e * w)
            }
            KernelForm::Sigmoid => {
                let t = dist_sq.tanh();
                (1.0 - t, -(1.0 - t * t))
            }
        }
    }

    pub fn kernel_weight(&self, i: usize, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.centers[i][0];
        let dy = p[1] - self.centers[i][1];
        self.kernel(dx * dx + dy * dy).0
    }

    pub fn eval(&self, p: [f64; 2]) -> SvfOutput {
        let mut rgb = [0.0; 3];
        let mut alpha = 0.0;
        for i in 0..self.len() {
            let w = self.kernel_weight(i, p);
            let c = self.colors[i];
            rgb[0] += w * c[0];
            rgb[1] += w * c[1];
            rgb[2] += w * c[2];
            alpha += w * self.opacities[i];
        }
        SvfOutput { rgb, alpha }
    }

    pub fn vjp(&self, p: [f64; 2], d_rgb: [f64; 3], d_alpha: f64, out: &mut [f64]) -> [f64; 2] {
        let mut d_p = [0.0; 2];
        for i in 0..self.len() {
            let dx = p[0] - self.centers[i][0];
            let dy = p[1] - self.centers[i][1];
            let (w, dw) = self.kernel(dx * dx + dy * dy);
            let c = self.colors[i];
            let g = c[0] * d_rgb[0] + c[1] * d_rgb[1] + c[2] * d_rgb[2] + self.opacities[i] * d_alpha;
            let d_dist = g * dw;
            let slot = &mut out[PARAMS_PER_KERNEL * i..PARAMS_PER_KERNEL * (i + 1)];
            slot[0] -= 2.0 * dx * d_dist;
            slot[1] -= 2.0 * dy * d_dist;
            slot[2] += w * d_rgb[0];
            slot[3] += w * d_rgb[1];
            slot[4] += w * d_rgb[2];
            slot[5] += w * d_alpha;
            d_p[0] += 2.0 * dx * d_dist;
            d_p[1] += 2.0 * dy * d_dist;
        }
        d_p
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        for i in 0..self.len() {
            out.extend_from_slice(&self.centers[i]);
            out.extend_from_slice(&self.colors[i]);
            out.push(self.opacities[i]);
        }
    }

    pub(crate) fn read_flat(&mut self, src: &[f64]) {
        for i in 0..self.len() {
            let s = &src[PARAMS_PER_KERNEL * i..PARAMS_PER_KERNEL * (i + 1)];
            self.centers[i] = [s[0], s[1]];
            self.colors[i] = [s[2], s[3], s[4]];
            self.opacities[i] = s[5];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sample(form: KernelForm) -> MovableKernelParams {
        MovableKernelParams {
            centers: vec![[0.2, -0.3], [8.0, 8.0], [-9.0, 3.0], [1.5, 1.5]],
            colors: vec![[0.1, 0.2, 0.3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.3, 0.2, 0.5]],
            opacities: vec![0.5, 0.25, 0.125, -0.1],
            lambda_e: DEFAULT_LAMBDA_E,
            form,
        }
    }

    #[test]
    fn unit_weight_at_kernel_center() {
        for form in [KernelForm::Exponential, KernelForm::Sigmoid] {
            let k = sample(form);
            assert_eq!(k.kernel_weight(0, [0.2, -0.3]), 1.0);
        }
    }

    #[test]
    fn flat_kernel_when_lambda_zero() {
        let mut k = sample(KernelForm::Exponential);
        k.lambda_e = 0.0;
        for p in [[0.0, 0.0], [3.0, -7.0], [100.0, 2.0]] {
            let out = k.eval(p);
            assert_relative_eq!(out.alpha, 0.775, epsilon = 1e-15);
            assert_relative_eq!(out.rgb[0], 0.8, epsilon = 1e-15);
            assert_relative_eq!(out.rgb[2], 0.8, epsilon = 1e-15);
        }
    }

    #[test]
    fn direct_formula() {
        let k = MovableKernelParams {
            centers: vec![[0.0, 0.0]],
            colors: vec![[1.0, 1.0, 1.0]],
            opacities: vec![1.0],
            lambda_e: 0.1,
            form: KernelForm::Exponential,
        };
        let w = k.kernel_weight(0, [1.0, 3.0]);
        assert_relative_eq!(w, (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(w, 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn initial_layout() {
        let k = MovableKernelParams::initial(4, KernelForm::Exponential, 0.1);
        assert_eq!(k.centers, vec![[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]]);
        assert_eq!(k.opacities, vec![0.025; 4]);
        let k8 = MovableKernelParams::initial(8, KernelForm::Exponential, 0.1);
        assert_eq!(k8.len(), 8);
        assert_eq!(k8.centers[4], [1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval(
            px in -20.0f64..20.0, py in -20.0f64..20.0,
            kx in -5.0f64..5.0, ky in -5.0f64..5.0,
            lambda in 0.0f64..3.0,
        ) {
            for form in [KernelForm::Exponential, KernelForm::Sigmoid] {
                let k = MovableKernelParams {
                    centers: vec![[kx, ky]],
                    colors: vec![[0.0; 3]],
                    opacities: vec![0.0],
                    lambda_e: lambda,
                    form,
                };
                let w = k.kernel_weight(0, [px, py]);
                prop_assert!((0.0..=1.0).contains(&w));
            }
        }

        #[test]
        fn permutation_invariant(rot in 0usize..4, px in -4.0f64..4.0, py in -4.0f64..4.0) {
            let k = sample(KernelForm::Exponential);
            let mut permuted = k.clone();
            permuted.centers.rotate_left(rot);
            permuted.colors.rotate_left(rot);
            permuted.opacities.rotate_left(rot);
            let a = k.eval([px, py]);
            let b = permuted.eval([px, py]);
            prop_assert!((a.alpha - b.alpha).abs() < 1e-14);
            for ch in 0..3 {
                prop_assert!((a.rgb[ch] - b.rgb[ch]).abs() < 1e-14);
            }
        }
    }
}
