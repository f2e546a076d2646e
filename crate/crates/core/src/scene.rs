//! Scenes: ordered collections of surfels sharing one appearance variant.
//!
//! Every surfel flattens to the same canonical layout used by the optimizer,
//! the gradient buffers and the scene file:
//! `center(3) | quaternion(4) | log_scale(2) | SH (3 per coefficient) | variant`.

use serde::{Deserialize, Serialize};

use crate::appearance::{Appearance, ParamGroup, ShCoefficients, VariantSpec, GEOMETRY_PARAMS};
use crate::error::{Error, Result};
use crate::geometry::SurfelGeometry;

#[derive(Clone, Debug, PartialEq)]
pub struct Surfel {
    pub geometry: SurfelGeometry,
    pub sh: ShCoefficients,
    pub appearance: Appearance,
}

impl Surfel {
    pub fn param_len(&self) -> usize {
        GEOMETRY_PARAMS + self.sh.scalar_count() + self.appearance.param_len()
    }

    /// Offset of the first appearance scalar in the flat layout.
    pub fn appearance_offset(&self) -> usize {
        GEOMETRY_PARAMS + self.sh.scalar_count()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        let g = &self.geometry;
        out.extend(g.center.iter());
        out.extend_from_slice(&g.rotation);
        out.extend_from_slice(&g.log_scale);
        for c in self.sh.coeffs() {
            out.extend_from_slice(c);
        }
        self.appearance.write_flat(out);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        self.write_flat(&mut out);
        out
    }

    /// Overwrite every trainable scalar from `src` (length [`Surfel::param_len`]).
    pub fn read_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.param_len(), "flat parameter length mismatch");
        let g = &mut self.geometry;
        g.center.copy_from_slice(&src[0..3]);
        g.rotation.copy_from_slice(&src[3..7]);
        g.log_scale.copy_from_slice(&src[7..9]);
        let mut at = GEOMETRY_PARAMS;
        for c in self.sh.coeffs_mut() {
            c.copy_from_slice(&src[at..at + 3]);
            at += 3;
        }
        self.appearance.read_flat(&src[at..]);
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::with_capacity(self.param_len());
        groups.extend([ParamGroup::Position; 3]);
        groups.extend([ParamGroup::Rotation; 4]);
        groups.extend([ParamGroup::Scale; 2]);
        groups.extend([ParamGroup::ShDc; 3]);
        groups.extend(std::iter::repeat_n(ParamGroup::ShRest, self.sh.scalar_count() - 3));
        self.appearance.param_groups(&mut groups);
        groups
    }

    /// Same shape with every trainable scalar set to zero.
    pub fn zeros_like(&self) -> Surfel {
        let mut z = self.clone();
        z.read_flat(&vec![0.0; self.param_len()]);
        z
    }

    pub fn is_finite(&self) -> bool {
        self.geometry.is_finite()
            && self.sh.coeffs().iter().flatten().all(|v| v.is_finite())
            && self.appearance.is_finite()
    }

    /// Variant plus SH degree; surfels of one scene must agree on this.
    pub fn shape(&self) -> (VariantSpec, u8) {
        (self.appearance.spec(), self.sh.degree())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub surfels: Vec<Surfel>,
}

impl Scene {
    pub fn new(surfels: Vec<Surfel>) -> Self {
        Self { surfels }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn variant(&self) -> Option<VariantSpec> {
        self.surfels.first().map(|s| s.appearance.spec())
    }

    pub fn sh_degree(&self) -> Option<u8> {
        self.surfels.first().map(|s| s.sh.degree())
    }

    /// Check that all surfels share one variant shape and hold finite values.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.surfels.first() else {
            return Ok(());
        };
        let shape = first.shape();
        for (index, s) in self.surfels.iter().enumerate() {
            if s.shape() != shape {
                return Err(Error::MixedVariants { index });
            }
            if !s.is_finite() {
                return Err(Error::NonFiniteParameter { index });
            }
        }
        Ok(())
    }
}

/// Serializable summary used in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub surfels: usize,
    pub variant: Option<String>,
    pub params_per_surfel: Option<usize>,
}

impl From<&Scene> for SceneSummary {
    fn from(scene: &Scene) -> Self {
        Self {
            surfels: scene.len(),
            variant: scene.variant().map(|v| v.to_string()),
            params_per_surfel: scene.surfels.first().map(|s| s.param_len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::param_count;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn surfel(spec: &str) -> Surfel {
        let spec: VariantSpec = spec.parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Surfel {
            geometry: SurfelGeometry::new(Vector3::new(0.1, 0.2, 0.3), UnitQuaternion::identity(), [0.5, 0.25]),
            sh: ShCoefficients::from_rgb(3, [0.2, 0.3, 0.4]),
            appearance: Appearance::initial(&spec, 0.1, &mut rng),
        }
    }

    #[test]
    fn flat_len_is_param_count() {
        for name in ["constant", "bilinear", "mk", "mk8", "mlp"] {
            let s = surfel(name);
            let spec = s.appearance.spec();
            assert_eq!(s.param_len(), param_count(spec.tag, spec.kernels, spec.hidden, 3).unwrap());
            assert_eq!(s.param_groups().len(), s.param_len());
            let flat = s.to_flat();
            let mut copy = s.zeros_like();
            copy.read_flat(&flat);
            assert_eq!(copy, s);
        }
    }

    #[test]
    fn validate_rejects_mixed_and_nonfinite() {
        let mut scene = Scene::new(vec![surfel("mk"), surfel("mk")]);
        assert!(scene.validate().is_ok());
        scene.surfels[1].geometry.center.x = f64::NAN;
        assert!(matches!(scene.validate(), Err(Error::NonFiniteParameter { index: 1 })));
        let scene = Scene::new(vec![surfel("mk"), surfel("bilinear")]);
        assert!(matches!(scene.validate(), Err(Error::MixedVariants { index: 1 })));
    }
}
