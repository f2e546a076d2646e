//! Per-surfel color and opacity.
//!
//! Color at an intersection is `SH(d) + F_c(p)` and opacity is `F_α(p)`, where
//! `p = (u, v)` is the object-space hit point. The spatially varying pair
//! `(F_c, F_α)` is one of the [`Appearance`] variants. The `Constant` variant
//! has no color term and a single sigmoid-activated opacity.

pub mod bilinear;
pub mod kernels;
pub mod mlp;
pub mod sh;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bilinear::BilinearParams;
pub use kernels::{KernelForm, MovableKernelParams};
pub use mlp::TinyMlpParams;
pub use sh::{eval_sh, ShCoefficients};

use crate::error::{Error, Result};

/// Scalars of [`SurfelGeometry`](crate::geometry::SurfelGeometry): center,
/// quaternion, log-scales.
pub const GEOMETRY_PARAMS: usize = 3 + 4 + 2;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SvfOutput {
    pub rgb: [f64; 3],
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantTag {
    Constant,
    Bilinear,
    MovableKernels,
    TinyMlp,
}

impl VariantTag {
    pub fn as_u8(self) -> u8 {
        match self {
            VariantTag::Constant => 0,
            VariantTag::Bilinear => 1,
            VariantTag::MovableKernels => 2,
            VariantTag::TinyMlp => 3,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => VariantTag::Constant,
            1 => VariantTag::Bilinear,
            2 => VariantTag::MovableKernels,
            3 => VariantTag::TinyMlp,
            _ => return Err(Error::InvalidVariant(format!("tag {v}"))),
        })
    }
}

/// A fully specified appearance variant (tag plus its size hyperparameters).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantSpec {
    pub tag: VariantTag,
    pub kernels: usize,
    pub form: KernelForm,
    pub hidden: usize,
}

impl VariantSpec {
    pub const fn new(tag: VariantTag) -> Self {
        Self {
            tag,
            kernels: kernels::DEFAULT_KERNEL_COUNT,
            form: KernelForm::Exponential,
            hidden: mlp::DEFAULT_HIDDEN,
        }
    }

    pub const fn constant() -> Self {
        Self::new(VariantTag::Constant)
    }

    pub const fn bilinear() -> Self {
        Self::new(VariantTag::Bilinear)
    }

    pub const fn movable_kernels(k: usize, form: KernelForm) -> Self {
        Self {
            kernels: k,
            form,
            ..Self::new(VariantTag::MovableKernels)
        }
    }

    pub const fn tiny_mlp(hidden: usize) -> Self {
        Self {
            hidden,
            ..Self::new(VariantTag::TinyMlp)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.tag {
            VariantTag::MovableKernels if self.kernels == 0 => {
                Err(Error::InvalidVariant("movable kernels need k >= 1".into()))
            }
            VariantTag::TinyMlp if !(1..=mlp::MAX_HIDDEN).contains(&self.hidden) => Err(
                Error::InvalidVariant(format!("hidden width must be in 1..={}", mlp::MAX_HIDDEN)),
            ),
            _ => Ok(()),
        }
    }

    /// Trainable scalars contributed by the spatially varying part alone.
    pub fn variant_params(&self) -> usize {
        match self.tag {
            VariantTag::Constant => 1,
            VariantTag::Bilinear => bilinear::PARAM_LEN,
            VariantTag::MovableKernels => kernels::PARAMS_PER_KERNEL * self.kernels,
            VariantTag::TinyMlp => mlp::param_len(self.hidden),
        }
    }

    pub fn param_count(&self, sh_degree: u8) -> Result<usize> {
        param_count(self.tag, self.kernels, self.hidden, sh_degree)
    }
}

impl FromStr for VariantSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => Self::constant(),
            "bilinear" => Self::bilinear(),
            "mk" => Self::movable_kernels(4, KernelForm::Exponential),
            "mk-sigmoid" => Self::movable_kernels(4, KernelForm::Sigmoid),
            "mk8" => Self::movable_kernels(8, KernelForm::Exponential),
            "mlp" => Self::tiny_mlp(mlp::DEFAULT_HIDDEN),
            other => return Err(Error::InvalidVariant(other.to_string())),
        })
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            VariantTag::Constant => write!(f, "constant"),
            VariantTag::Bilinear => write!(f, "bilinear"),
            VariantTag::MovableKernels => match (self.kernels, self.form) {
                (4, KernelForm::Exponential) => write!(f, "mk"),
                (4, KernelForm::Sigmoid) => write!(f, "mk-sigmoid"),
                (8, KernelForm::Exponential) => write!(f, "mk8"),
                (k, KernelForm::Exponential) => write!(f, "mk(k={k})"),
                (k, KernelForm::Sigmoid) => write!(f, "mk-sigmoid(k={k})"),
            },
            VariantTag::TinyMlp => write!(f, "mlp(h={})", self.hidden),
        }
    }
}

/// Per-surfel trainable scalar count: geometry, SH and the variant's own
/// parameters.
pub fn param_count(tag: VariantTag, k: usize, hidden: usize, sh_degree: u8) -> Result<usize> {
    if sh_degree > sh::MAX_SH_DEGREE {
        return Err(Error::InvalidVariant(format!("SH degree {sh_degree} > 3")));
    }
    let spec = VariantSpec {
        tag,
        kernels: k,
        form: KernelForm::Exponential,
        hidden,
    };
    spec.validate()?;
    Ok(GEOMETRY_PARAMS + 3 * sh::coeff_count(sh_degree) + spec.variant_params())
}

/// Optimizer parameter groups; each gets its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    ShDc,
    ShRest,
    Opacity,
    VariantColor,
    VariantOpacity,
    KernelCenter,
    LambdaS,
    Mlp,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Scale => "scale",
            ParamGroup::ShDc => "sh_dc",
            ParamGroup::ShRest => "sh_rest",
            ParamGroup::Opacity => "opacity",
            ParamGroup::VariantColor => "variant_color",
            ParamGroup::VariantOpacity => "variant_opacity",
            ParamGroup::KernelCenter => "kernel_center",
            ParamGroup::LambdaS => "lambda_s",
            ParamGroup::Mlp => "mlp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Appearance {
    /// Stored opacity logit; the effective opacity is `sigmoid(opacity)`.
    Constant { opacity: f64 },
    Bilinear(BilinearParams),
    MovableKernels(MovableKernelParams),
    TinyMlp(TinyMlpParams),
}

impl Appearance {
    /// Near-constant starting point for a surfel whose effective opacity is
    /// `base_opacity`.
    pub fn initial(spec: &VariantSpec, base_opacity: f64, rng: &mut impl Rng) -> Self {
        match spec.tag {
            VariantTag::Constant => Appearance::Constant {
                opacity: logit(base_opacity),
            },
            VariantTag::Bilinear => Appearance::Bilinear(BilinearParams::uniform([0.0; 3], base_opacity)),
            VariantTag::MovableKernels => Appearance::MovableKernels(MovableKernelParams::initial(
                spec.kernels,
                spec.form,
                base_opacity,
            )),
            VariantTag::TinyMlp => Appearance::TinyMlp(TinyMlpParams::initial(spec.hidden, base_opacity, rng)),
        }
    }

    pub fn tag(&self) -> VariantTag {
        match self {
            Appearance::Constant { .. } => VariantTag::Constant,
            Appearance::Bilinear(_) => VariantTag::Bilinear,
            Appearance::MovableKernels(_) => VariantTag::MovableKernels,
            Appearance::TinyMlp(_) => VariantTag::TinyMlp,
        }
    }

    pub fn spec(&self) -> VariantSpec {
        match self {
            Appearance::MovableKernels(k) => VariantSpec::movable_kernels(k.len(), k.form),
            Appearance::TinyMlp(m) => VariantSpec::tiny_mlp(m.hidden),
            other => VariantSpec::new(other.tag()),
        }
    }

    /// `(F_c(p), F_α(p))`. For `Constant` the color term is zero and the
    /// opacity is the sigmoid of the stored logit.
    #[inline]
    pub fn eval(&self, p: [f64; 2]) -> SvfOutput {
        match self {
            Appearance::Constant { opacity } => SvfOutput {
                rgb: [0.0; 3],
                alpha: sigmoid(*opacity),
            },
            Appearance::Bilinear(b) => b.eval(p),
            Appearance::MovableKernels(k) => k.eval(p),
            Appearance::TinyMlp(m) => m.eval(p),
        }
    }

    /// Accumulate parameter gradients into `out` (this variant's flat layout)
    /// and return the gradient with respect to `p`.
    #[inline]
    pub fn vjp(&self, p: [f64; 2], d_rgb: [f64; 3], d_alpha: f64, out: &mut [f64]) -> [f64; 2] {
        match self {
            Appearance::Constant { opacity } => {
                let s = sigmoid(*opacity);
                out[0] += d_alpha * s * (1.0 - s);
                [0.0; 2]
            }
            Appearance::Bilinear(b) => b.vjp(p, d_rgb, d_alpha, out),
            Appearance::MovableKernels(k) => k.vjp(p, d_rgb, d_alpha, out),
            Appearance::TinyMlp(m) => m.vjp(p, d_rgb, d_alpha, out),
        }
    }

    pub fn param_len(&self) -> usize {
        self.spec().variant_params()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        match self {
            Appearance::Constant { opacity } => out.push(*opacity),
            Appearance::Bilinear(b) => b.write_flat(out),
            Appearance::MovableKernels(k) => k.write_flat(out),
            Appearance::TinyMlp(m) => m.write_flat(out),
        }
    }

    /// Overwrite parameters from a flat slice of length [`Appearance::param_len`].
    pub fn read_flat(&mut self, src: &[f64]) {
        debug_assert_eq!(src.len(), self.param_len());
        match self {
            Appearance::Constant { opacity } => *opacity = src[0],
            Appearance::Bilinear(b) => b.read_flat(src),
            Appearance::MovableKernels(k) => k.read_flat(src),
            Appearance::TinyMlp(m) => m.read_flat(src),
        }
    }

    pub fn param_groups(&self, out: &mut Vec<ParamGroup>) {
        match self {
            Appearance::Constant { .. } => out.push(ParamGroup::Opacity),
            Appearance::Bilinear(_) => {
                out.extend(std::iter::repeat_n(ParamGroup::VariantColor, 12));
                out.extend(std::iter::repeat_n(ParamGroup::VariantOpacity, 4));
                out.push(ParamGroup::LambdaS);
            }
            Appearance::MovableKernels(k) => {
                for _ in 0..k.len() {
                    out.extend([ParamGroup::KernelCenter; 2]);
                    out.extend([ParamGroup::VariantColor; 3]);
                    out.push(ParamGroup::VariantOpacity);
                }
            }
            Appearance::TinyMlp(m) => {
                out.extend(std::iter::repeat_n(ParamGroup::Mlp, m.param_len()));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let mut flat = Vec::with_capacity(self.param_len());
        self.write_flat(&mut flat);
        let extra_ok = match self {
            Appearance::MovableKernels(k) => k.lambda_e.is_finite(),
            _ => true,
        };
        extra_ok && flat.iter().all(|v| v.is_finite())
    }

    /// Opacity evaluated before the Gaussian falloff, as composited (negative
    /// values clamp to zero).
    pub fn opacity_at(&self, p: [f64; 2]) -> f64 {
        self.eval(p).alpha.max(0.0)
    }

    /// Largest opacity over a 5x5 probe grid spanning `[-2, 2]^2` in uv.
    pub fn peak_opacity(&self) -> f64 {
        probe_grid()
            .map(|p| self.opacity_at(p))
            .fold(0.0, f64::max)
    }
}

/// The 25 points `{-2, -1, 0, 1, 2}^2` in uv.
pub fn probe_grid() -> impl Iterator<Item = [f64; 2]> {
    (0..25).map(|i| [(i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0])
}
