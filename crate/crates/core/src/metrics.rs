//! PSNR and SSIM.
//!
//! SSIM uses an 11x11 Gaussian window with sigma 1.5 and the usual stability
//! constants for a `[0, 1]` dynamic range. Near the image border the window
//! is truncated to the pixels inside the image and renormalized, so constant
//! images have exactly constant local statistics.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate(a: &Image, b: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

/// Peak signal-to-noise ratio in dB of the `[0, 1]`-clamped images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = (a.pixels().len() * 3) as f64;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| {
            (0..3)
                .map(|c| {
                    let d = p[c].clamp(0.0, 1.0) - q[c].clamp(0.0, 1.0);
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    let mse = sse / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let win = Window::new(a.width(), a.height());
    let total: f64 = (0..3)
        .map(|c| channel_ssim(&win, &a.channel(c), &b.channel(c), None))
        .sum();
    Ok(total / (3 * a.pixels().len()) as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.ensure_same_shape(b)?;
    let win = Window::new(a.width(), a.height());
    let n = (3 * a.pixels().len()) as f64;
    let mut grad = Image::new(a.width(), a.height(), [0.0; 3]);
    let mut total = 0.0;
    for c in 0..3 {
        let mut g = vec![0.0; a.pixels().len()];
        total += channel_ssim(&win, &a.channel(c), &b.channel(c), Some(&mut g));
        for (px, gv) in grad.pixels_mut().iter_mut().zip(g) {
            px[c] = gv / n;
        }
    }
    Ok((total / n, grad))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Separable truncated Gaussian blur with per-row/column mass normalization.
struct Window {
    width: usize,
    height: usize,
    kernel: [f64; SSIM_WINDOW],
    mass_x: Vec<f64>,
    mass_y: Vec<f64>,
}

impl Window {
    fn new(width: usize, height: usize) -> Self {
        let kernel = gaussian_kernel();
        let mass = |len: usize| -> Vec<f64> {
            let ones = vec![1.0; len];
            let mut out = vec![0.0; len];
            blur_1d(&kernel, &ones, len, 1, 1, &mut out);
            out
        };
        Self {
            width,
            height,
            kernel,
            mass_x: mass(width),
            mass_y: mass(height),
        }
    }

    /// Zero-padded, unnormalized blur along x then y.
    fn raw(&self, src: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            blur_1d(&self.kernel, &src[y * w..], w, 1, 1, &mut tmp[y * w..]);
        }
        let mut out = vec![0.0; w * h];
        for x in 0..w {
            blur_1d(&self.kernel, &tmp[x..], h, w, w, &mut out[x..]);
        }
        out
    }

    fn blur(&self, src: &[f64]) -> Vec<f64> {
        let mut out = self.raw(src);
        self.divide_mass(&mut out);
        out
    }

    /// Adjoint of [`Window::blur`].
    fn blur_adjoint(&self, src: &[f64]) -> Vec<f64> {
        let mut scaled = src.to_vec();
        self.divide_mass(&mut scaled);
        self.raw(&scaled)
    }

    fn divide_mass(&self, v: &mut [f64]) {
        for y in 0..self.height {
            for x in 0..self.width {
                v[y * self.width + x] /= self.mass_x[x] * self.mass_y[y];
            }
        }
    }
}

/// 1-D zero-padded correlation over `len` samples spaced by `stride`.
fn blur_1d(kernel: &[f64; SSIM_WINDOW], src: &[f64], len: usize, stride: usize, out_stride: usize, out: &mut [f64]) {
    let half = (SSIM_WINDOW / 2) as isize;
    for i in 0..len as isize {
        let mut acc = 0.0;
        for (k, g) in kernel.iter().enumerate() {
            let j = i + k as isize - half;
            if j >= 0 && j < len as isize {
                acc += g * src[j as usize * stride];
            }
        }
        out[i as usize * out_stride] = acc;
    }
}

/// Sum of the SSIM map of one channel; optionally writes the gradient of
/// that sum with respect to `x` into `grad`.
fn channel_ssim(win: &Window, x: &[f64], y: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = win.blur(x);
    let mu_y = win.blur(y);
    let s_xx = win.blur(&xx);
    let s_yy = win.blur(&yy);
    let s_xy = win.blur(&xy);

    let n = x.len();
    let mut total = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_sxx = vec![0.0; n];
    let mut d_sxy = vec![0.0; n];
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = s_xx[i] - mx * mx;
        let var_y = s_yy[i] - my * my;
        let cov = s_xy[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = var_x + var_y + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if grad.is_some() {
            let inv = 1.0 / (b1 * b2);
            d_mu[i] = 2.0 * my * a2 * inv - 2.0 * my * a1 * inv - s * 2.0 * mx / b1 + s * 2.0 * mx / b2;
            d_sxx[i] = -s / b2;
            d_sxy[i] = 2.0 * a1 * inv;
        }
    }
    if let Some(grad) = grad {
        let g_mu = win.blur_adjoint(&d_mu);
        let g_sxx = win.blur_adjoint(&d_sxx);
        let g_sxy = win.blur_adjoint(&d_sxy);
        for i in 0..n {
            grad[i] = g_mu[i] + 2.0 * x[i] * g_sxx[i] + y[i] * g_sxy[i];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        let px = (0..w * h).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect();
        Image::from_pixels(w, h, px).unwrap()
    }

    /// Direct 2-D window evaluation with explicit renormalization per pixel.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (w, h) = (a.width() as isize, a.height() as isize);
        let half = 5isize;
        let mut total = 0.0;
        for c in 0..3 {
            for py in 0..h {
                for px in 0..w {
                    let (mut m, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let (qx, qy) = (px + dx, py + dy);
                            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                                continue;
                            }
                            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                            let va = a.get(qx as usize, qy as usize)[c];
                            let vb = b.get(qx as usize, qy as usize)[c];
                            m += g;
                            sx += g * va;
                            sy += g * vb;
                            sxx += g * va * va;
                            syy += g * vb * vb;
                            sxy += g * va * vb;
                        }
                    }
                    let (mx, my) = (sx / m, sy / m);
                    let vx = sxx / m - mx * mx;
                    let vy = syy / m - my * my;
                    let cv = sxy / m - mx * my;
                    total += (2.0 * mx * my + SSIM_C1) * (2.0 * cv + SSIM_C2)
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                }
            }
        }
        total / (3 * w * h) as f64
    }

    #[test]
    fn psnr_cases() {
        let a = Image::new(8, 8, [0.3; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::new(8, 8, [0.4; 3]);
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        assert!(psnr(&a, &Image::new(4, 8, [0.0; 3])).is_err());
    }

    #[test]
    fn psnr_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 13, 9);
        let b = random_image(&mut rng, 13, 9);
        let mut sse = 0.0;
        for y in 0..9 {
            for x in 0..13 {
                for c in 0..3 {
                    let d = a.get(x, y)[c] - b.get(x, y)[c];
                    sse += d * d;
                }
            }
        }
        let expected = 10.0 * (1.0 / (sse / (13.0 * 9.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Image::new(16, 16, [0.5; 3]);
        let noise: Vec<[f64; 3]> = (0..256).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let mut prev = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
            let px = noise.iter().map(|n| n.map(|v| 0.5 + amp * v)).collect();
            let noisy = Image::from_pixels(16, 16, px).unwrap();
            let p = psnr(&base, &noisy).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 20, 17);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let zero = Image::new(20, 17, [0.0; 3]);
        let one = Image::new(20, 17, [1.0; 3]);
        let expected = (2.0 * 0.0 * 1.0 + SSIM_C1) * (2.0 * 0.0 + SSIM_C2)
            / ((0.0 + 1.0 + SSIM_C1) * (0.0 + 0.0 + SSIM_C2));
        assert_relative_eq!(ssim(&zero, &one).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (w, h) in [(24, 19), (7, 5), (1, 1)] {
            let a = random_image(&mut rng, w, h);
            let b = random_image(&mut rng, w, h);
            let fast = ssim(&a, &b).unwrap();
            assert!((fast - ssim_oracle(&a, &b)).abs() < 1e-6);
            assert!((fast - ssim(&b, &a).unwrap()).abs() < 1e-14);
            assert!(fast <= 1.0);
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 14, 12);
        let b = random_image(&mut rng, 14, 12);
        let (value, grad) = ssim_with_grad(&a, &b).unwrap();
        assert_relative_eq!(value, ssim(&a, &b).unwrap(), epsilon = 1e-14);
        let h = 1e-5;
        for _ in 0..40 {
            let (x, y, c) = (rng.gen_range(0..14), rng.gen_range(0..12), rng.gen_range(0..3));
            let mut p = a.clone();
            let mut m = a.clone();
            let mut v = p.get(x, y);
            v[c] += h;
            p.set(x, y, v);
            let mut v = m.get(x, y);
            v[c] -= h;
            m.set(x, y, v);
            let numeric = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            let analytic = grad.get(x, y)[c];
            assert!((numeric - analytic).abs() <= 1e-5 * numeric.abs().max(analytic.abs()).max(1e-3));
        }
    }
}
