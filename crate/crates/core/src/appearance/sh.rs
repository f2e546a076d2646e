//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Basis ordering and constants follow the table used by the common
//! splatting implementations, sign conventions included.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: u8 = 3;

pub const fn coeff_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShCoefficients {
    degree: u8,
    coeffs: Vec<[f64; 3]>,
}

impl ShCoefficients {
    pub fn zeros(degree: u8) -> Self {
        assert!(degree <= MAX_SH_DEGREE, "SH degree {degree} > {MAX_SH_DEGREE}");
        Self {
            degree,
            coeffs: vec![[0.0; 3]; coeff_count(degree)],
        }
    }

    /// Coefficients reproducing `rgb` in every direction.
    pub fn from_rgb(degree: u8, rgb: [f64; 3]) -> Self {
        let mut sh = Self::zeros(degree);
        sh.coeffs[0] = rgb.map(|c| (c - 0.5) / SH_C0);
        sh
    }

    pub fn from_coeffs(degree: u8, coeffs: Vec<[f64; 3]>) -> Option<Self> {
        (degree <= MAX_SH_DEGREE && coeffs.len() == coeff_count(degree))
            .then_some(Self { degree, coeffs })
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn coeffs(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.coeffs
    }

    pub fn scalar_count(&self) -> usize {
        3 * self.coeffs.len()
    }
}

/// Basis values for a unit direction; entries above `degree` are zero.
pub fn sh_basis(dir: &Vector3<f64>, degree: u8) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Partial derivatives of each basis function with respect to `(x, y, z)`.
fn sh_basis_grad(dir: &Vector3<f64>, degree: u8) -> [[f64; 3]; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ];
        g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        g[11] = [
            SH_C3[2] * -2.0 * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ];
        g[12] = [
            SH_C3[3] * -6.0 * x * z,
            SH_C3[3] * -6.0 * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * -2.0 * x * y,
            SH_C3[4] * 8.0 * x * z,
        ];
        g[14] = [
            SH_C3[5] * 2.0 * x * z,
            SH_C3[5] * -2.0 * y * z,
            SH_C3[5] * (xx - yy),
        ];
        g[15] = [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * -6.0 * x * y,
            0.0,
        ];
    }
    g
}

/// Evaluate view-dependent color for a unit direction, using all stored
/// degrees. The result carries the usual +0.5 offset and is not clamped.
pub fn eval_sh(sh: &ShCoefficients, dir: &Vector3<f64>) -> [f64; 3] {
    eval_sh_limited(sh, dir, sh.degree)
}

/// Like [`eval_sh`] but ignores bands above `max_degree`.
pub fn eval_sh_limited(sh: &ShCoefficients, dir: &Vector3<f64>, max_degree: u8) -> [f64; 3] {
    let degree = sh.degree.min(max_degree);
    let basis = sh_basis(dir, degree);
    let mut rgb = [0.5; 3];
    for (b, c) in basis.iter().zip(&sh.coeffs[..coeff_count(degree)]) {
        for ch in 0..3 {
            rgb[ch] += b * c[ch];
        }
    }
    rgb
}

/// Backward pass of [`eval_sh_limited`]. Adds coefficient gradients into
/// `d_coeffs` (flattened RGB triplets) and returns the gradient with respect
/// to the direction.
pub fn eval_sh_vjp(
    sh: &ShCoefficients,
    dir: &Vector3<f64>,
    max_degree: u8,
    d_rgb: [f64; 3],
    d_coeffs: &mut [f64],
) -> Vector3<f64> {
    let degree = sh.degree.min(max_degree);
    let n = coeff_count(degree);
    let basis = sh_basis(dir, degree);
    let grad = sh_basis_grad(dir, degree);
    let mut d_dir = Vector3::zeros();
    for k in 0..n {
        let c = sh.coeffs[k];
        let mut proj = 0.0;
        for ch in 0..3 {
            d_coeffs[3 * k + ch] += basis[k] * d_rgb[ch];
            proj += c[ch] * d_rgb[ch];
        }
        d_dir += Vector3::from(grad[k]) * proj;
    }
    d_dir
}
