//! Binary scene container.
//!
//! Layout (little endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4  | magic `SGS1` |
//! | 4  | `u32` format version (1) |
//! | 1  | variant tag (0 constant, 1 bilinear, 2 movable kernels, 3 tiny MLP) |
//! | 1  | kernel form (0 exponential, 1 sigmoid) |
//! | 1  | SH degree |
//! | 1  | reserved, zero |
//! | 4  | `u32` kernel count |
//! | 4  | `u32` MLP hidden width |
//! | 8  | `u64` surfel count |
//!
//! followed, per surfel, by its flat parameter vector as `f64` and, for
//! movable kernels, the kernel falloff rate. Values are stored bit-exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use supersplat::appearance::sh::MAX_SH_DEGREE;
use supersplat::appearance::{Appearance, KernelForm, ShCoefficients, VariantSpec, VariantTag};
use supersplat::{Scene, Surfel, SurfelGeometry};

use crate::{io_err, Result, WorkbenchError};

pub const MAGIC: &[u8; 4] = b"SGS1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

fn form_code(form: KernelForm) -> u8 {
    match form {
        KernelForm::Exponential => 0,
        KernelForm::Sigmoid => 1,
    }
}

pub fn encode_scene(scene: &Scene) -> Result<Vec<u8>> {
    scene.validate()?;
    let spec = scene.variant().unwrap_or_else(VariantSpec::constant);
    let degree = scene.sh_degree().unwrap_or(MAX_SH_DEGREE);
    let (kernels, hidden) = match spec.tag {
        VariantTag::MovableKernels => (spec.kernels, 0),
        VariantTag::TinyMlp => (0, spec.hidden),
        _ => (0, 0),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + scene.len() * 8 * 128);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(spec.tag.as_u8());
    out.push(form_code(spec.form));
    out.push(degree);
    out.push(0);
    out.extend_from_slice(&(kernels as u32).to_le_bytes());
    out.extend_from_slice(&(hidden as u32).to_le_bytes());
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    for s in &scene.surfels {
        for v in s.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Appearance::MovableKernels(k) = &s.appearance {
            out.extend_from_slice(&k.lambda_e.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene> {
    let err = |m: String| WorkbenchError::SceneFormat(m);
    if bytes.len() < HEADER_LEN {
        return Err(err(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(err("bad magic, not a scene file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported format version {version}")));
    }
    let tag = VariantTag::from_u8(bytes[8]).map_err(|e| err(e.to_string()))?;
    let form = match bytes[9] {
        0 => KernelForm::Exponential,
        1 => KernelForm::Sigmoid,
        f => return Err(err(format!("unknown kernel form {f}"))),
    };
    let degree = bytes[10];
    if degree > MAX_SH_DEGREE {
        return Err(err(format!("SH degree {degree} out of range")));
    }
    if bytes[11] != 0 {
        return Err(err("reserved header byte is not zero".into()));
    }
    let kernels = u32_at(12) as usize;
    let hidden = u32_at(16) as usize;
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let spec = match tag {
        VariantTag::Constant => VariantSpec::constant(),
        VariantTag::Bilinear => VariantSpec::bilinear(),
        VariantTag::MovableKernels => VariantSpec::movable_kernels(kernels, form),
        VariantTag::TinyMlp => VariantSpec::tiny_mlp(hidden),
    };
    if count > 0 {
        spec.validate().map_err(|e| err(e.to_string()))?;
    }

    let mut template = Surfel {
        geometry: SurfelGeometry::new(Default::default(), Default::default(), [1.0, 1.0]),
        sh: ShCoefficients::zeros(degree),
        appearance: Appearance::initial(&spec, 0.5, &mut ChaCha8Rng::seed_from_u64(0)),
    };
    let scalars = template.param_len() + usize::from(tag == VariantTag::MovableKernels);
    let expected = usize::try_from(count)
        .ok()
        .and_then(|n| n.checked_mul(scalars * 8))
        .and_then(|n| n.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(err(format!(
            "expected {} bytes for {count} surfels, found {}",
            expected.map_or("an impossible number of".to_string(), |n| n.to_string()),
            bytes.len()
        )));
    }

    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut surfels = Vec::with_capacity(count as usize);
    let mut flat = vec![0.0; template.param_len()];
    for _ in 0..count {
        for v in flat.iter_mut() {
            *v = values.next().expect("length checked");
        }
        template.read_flat(&flat);
        if let Appearance::MovableKernels(k) = &mut template.appearance {
            k.lambda_e = values.next().expect("length checked");
        }
        surfels.push(template.clone());
    }
    let scene = Scene::new(surfels);
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    let bytes = encode_scene(scene)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_scene(&bytes)
}
