//! Finite-difference verification of every hand-written backward pass.

use nalgebra::{Isometry3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::{Appearance, ShCoefficients, VariantSpec};
use crate::error::{Error, Result};
use crate::geometry::{intersect, intersect_vjp, Camera, SurfelGeometry, DEFAULT_UV_CUTOFF};
use crate::image::Image;
use crate::renderer::{composite_structure, render, render_backward, RenderConfig};
use crate::scene::{Scene, Surfel};
use crate::training::photometric_loss;

pub const SVF_TOLERANCE: f64 = 1e-5;
pub const RENDERER_TOLERANCE: f64 = 1e-4;
pub const RENDERER_STEP: f64 = 1e-5;
/// Random renderer cases tried before giving up.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            scalars: 0,
            max_rel_error: 0.0,
            tolerance,
            passed: true,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = rel_error(analytic, numeric);
        self.scalars += 1;
        if !(err <= self.max_rel_error) {
            self.max_rel_error = err;
        }
        if !(err < self.tolerance) {
            self.passed = false;
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-3)`: relative for large values, absolute
/// near zero where relative error is meaningless.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Fill an appearance with random parameters in a well-conditioned range.
pub fn randomize_appearance(app: &mut Appearance, rng: &mut impl Rng) {
    match app {
        Appearance::Constant { opacity } => *opacity = rng.gen_range(-1.0..2.0),
        Appearance::Bilinear(b) => {
            for c in b.corner_colors.iter_mut().flatten() {
                *c = rng.gen_range(-0.5..0.5);
            }
            for a in &mut b.corner_opacities {
                *a = rng.gen_range(0.2..0.95);
            }
            b.lambda_s = rng.gen_range(0.5..8.0);
        }
        Appearance::MovableKernels(k) => {
            for c in &mut k.centers {
                *c = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)];
            }
            for c in k.colors.iter_mut().flatten() {
                *c = rng.gen_range(-0.5..0.5);
            }
            for a in &mut k.opacities {
                *a = rng.gen_range(0.15..0.5);
            }
            k.lambda_e = rng.gen_range(0.05..1.0);
        }
        Appearance::TinyMlp(m) => {
            for w in m.w1.iter_mut().chain(&mut m.b1).chain(&mut m.w2).chain(&mut m.b2).chain(&mut m.w3) {
                *w = rng.gen_range(-1.0..1.0);
            }
            for b in &mut m.b3[..3] {
                *b = rng.gen_range(-0.5..0.5);
            }
            m.b3[3] = rng.gen_range(0.3..0.8);
        }
    }
}

/// Check the SVF backward pass (parameters and evaluation point) on
/// `cases` random instances.
pub fn check_svf(spec: &VariantSpec, cases: usize, seed: u64) -> Result<CheckReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("svf:{spec}"), SVF_TOLERANCE);
    let h = 1e-6;
    for _ in 0..cases {
        let mut app = Appearance::initial(spec, 0.5, &mut rng);
        randomize_appearance(&mut app, &mut rng);
        let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let d_rgb = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
        let d_alpha = rng.gen_range(-1.0..1.0);
        let objective = |a: &Appearance, p: [f64; 2]| {
            let out = a.eval(p);
            (0..3).map(|c| d_rgb[c] * out.rgb[c]).sum::<f64>() + d_alpha * out.alpha
        };
        let mut grad = vec![0.0; app.param_len()];
        let d_p = app.vjp(p, d_rgb, d_alpha, &mut grad);
        let mut flat = Vec::new();
        app.write_flat(&mut flat);
        for j in 0..flat.len() {
            let mut bumped = app.clone();
            let mut f = flat.clone();
            f[j] += h;
            bumped.read_flat(&f);
            let plus = objective(&bumped, p);
            f[j] -= 2.0 * h;
            bumped.read_flat(&f);
            let minus = objective(&bumped, p);
            report.record(grad[j], (plus - minus) / (2.0 * h));
        }
        for i in 0..2 {
            let mut pp = p;
            pp[i] += h;
            let plus = objective(&app, pp);
            pp[i] -= 2.0 * h;
            let minus = objective(&app, pp);
            report.record(d_p[i], (plus - minus) / (2.0 * h));
        }
        report.cases += 1;
    }
    Ok(report)
}

fn random_facing_rotation(rng: &mut impl Rng, max_tilt: f64) -> UnitQuaternion<f64> {
    let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.gen_range(0.0..std::f64::consts::TAU));
    let axis = Unit::new_normalize(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0));
    UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-max_tilt..max_tilt)) * spin
}

/// Check the ray-surfel intersection backward pass.
pub fn check_intersection(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("intersection", SVF_TOLERANCE);
    let camera = Camera::new(32, 32, 30.0, 30.0, 16.0, 16.0, Isometry3::identity())?;
    let h = 1e-6;
    while report.cases < cases {
        let z = rng.gen_range(1.5..4.0);
        let geometry = SurfelGeometry::new(
            Vector3::new(rng.gen_range(-0.3..0.3) * z, rng.gen_range(-0.3..0.3) * z, z),
            random_facing_rotation(&mut rng, 1.0),
            [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)],
        );
        let pixel = [rng.gen_range(0.0..32.0), rng.gen_range(0.0..32.0)];
        let Some(sample) = intersect(&camera, pixel, &geometry, DEFAULT_UV_CUTOFF) else {
            continue;
        };
        let r2 = sample.uv[0].powi(2) + sample.uv[1].powi(2);
        if DEFAULT_UV_CUTOFF.powi(2) - r2 < 1e-2 {
            continue;
        }
        let d_uv = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let d_w = rng.gen_range(-1.0..1.0);
        let objective = |g: &SurfelGeometry| {
            let s = intersect(&camera, pixel, g, DEFAULT_UV_CUTOFF).expect("perturbation stays inside the cutoff");
            d_uv[0] * s.uv[0] + d_uv[1] * s.uv[1] + d_w * s.gaussian_weight
        };
        let grad = intersect_vjp(&camera, pixel, &geometry, DEFAULT_UV_CUTOFF, d_uv, d_w);
        let analytic: Vec<f64> = grad
            .center
            .iter()
            .copied()
            .chain(grad.rotation)
            .chain(grad.log_scale)
            .collect();
        for (j, a) in analytic.into_iter().enumerate() {
            let bump = |delta: f64| {
                let mut g = geometry.clone();
                match j {
                    0..=2 => g.center[j] += delta,
                    3..=6 => g.rotation[j - 3] += delta,
                    _ => g.log_scale[j - 7] += delta,
                }
                objective(&g)
            };
            report.record(a, (bump(h) - bump(-h)) / (2.0 * h));
        }
        report.cases += 1;
    }
    Ok(report)
}

/// Check the photometric loss gradient on random images.
pub fn check_loss(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new("photometric_loss", SVF_TOLERANCE);
    let h = 1e-6;
    for _ in 0..cases {
        let (w, ht) = (rng.gen_range(11..20), rng.gen_range(11..20));
        let mut random_image = || {
            let px = (0..w * ht).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect();
            Image::from_pixels(w, ht, px)
        };
        let a = random_image()?;
        let b = random_image()?;
        let weight = 0.2;
        let (_, grad) = photometric_loss(&a, &b, weight)?;
        for _ in 0..10 {
            let (x, y, c) = (rng.gen_range(0..w), rng.gen_range(0..ht), rng.gen_range(0..3));
            let bump = |delta: f64| -> Result<f64> {
                let mut img = a.clone();
                let mut v = img.get(x, y);
                v[c] += delta;
                img.set(x, y, v);
                Ok(photometric_loss(&img, &b, weight)?.0)
            };
            report.record(grad.get(x, y)[c], (bump(h)? - bump(-h)?) / (2.0 * h));
        }
        report.cases += 1;
    }
    Ok(report)
}

/// Three random surfels in front of an 8x8 camera, resampled until every
/// surfel is visible.
pub fn random_renderer_case(spec: &VariantSpec, rng: &mut ChaCha8Rng) -> Result<(Scene, Camera, RenderConfig)> {
    let camera = Camera::new(8, 8, 8.0, 8.0, 4.0, 4.0, Isometry3::identity())?;
    let config = RenderConfig {
        background: [0.1, 0.2, 0.3],
        tile_size: 4,
        ..RenderConfig::default()
    };
    for _ in 0..10_000 {
        let surfels: Vec<Surfel> = (0..3)
            .map(|_| {
                let z = rng.gen_range(2.0..4.0);
                let geometry = SurfelGeometry::new(
                    Vector3::new(rng.gen_range(-0.25..0.25) * z, rng.gen_range(-0.25..0.25) * z, z),
                    random_facing_rotation(rng, 0.7),
                    [rng.gen_range(0.15..0.5) * z / 3.0, rng.gen_range(0.15..0.5) * z / 3.0],
                );
                let mut sh = ShCoefficients::from_rgb(3, [0, 1, 2].map(|_| rng.gen_range(0.2..0.8)));
                for c in sh.coeffs_mut()[1..].iter_mut().flatten() {
                    *c = rng.gen_range(-0.3..0.3);
                }
                let mut appearance = Appearance::initial(spec, 0.5, rng);
                randomize_appearance(&mut appearance, rng);
                Surfel {
                    geometry,
                    sh,
                    appearance,
                }
            })
            .collect();
        let scene = Scene::new(surfels);
        let zero = Image::new(8, 8, [1.0; 3]);
        let visible = render_backward(&scene, &camera, &config, &zero)?.visible;
        if visible.iter().all(|&v| v) {
            return Ok((scene, camera, config));
        }
    }
    Err(Error::InvalidConfig("could not sample a well-conditioned renderer case".into()))
}

/// End-to-end check of the renderer backward pass over every trainable
/// scalar of a random three-surfel scene. A case is discarded and redrawn
/// when any perturbation changes the discrete composite structure (a sample
/// crossing the uv cutoff, the alpha floor or ceiling, a depth swap or the
/// early-exit point), since the finite difference then straddles a kink.
pub fn check_renderer(spec: &VariantSpec, seed: u64) -> Result<CheckReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'cases: for _ in 0..MAX_RESAMPLES {
        let (scene, camera, config) = random_renderer_case(spec, &mut rng)?;
        let d_color = Image::from_pixels(
            8,
            8,
            (0..64).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect(),
        )?;
        let structure = composite_structure(&scene, &camera, &config)?;
        let objective = |s: &Scene| -> Result<f64> {
            let out = render(s, &camera, &config)?;
            Ok(out
                .color
                .pixels()
                .iter()
                .zip(d_color.pixels())
                .map(|(c, d)| c[0] * d[0] + c[1] * d[1] + c[2] * d[2])
                .sum())
        };
        let grads = render_backward(&scene, &camera, &config, &d_color)?;
        let mut report = CheckReport::new(format!("renderer:{spec}"), RENDERER_TOLERANCE);
        for i in 0..scene.len() {
            let analytic = grads.flat(i);
            let flat = scene.surfels[i].to_flat();
            for (j, a) in analytic.into_iter().enumerate() {
                let mut bumped = scene.clone();
                let mut f = flat.clone();
                let mut values = [0.0; 2];
                for (k, delta) in [RENDERER_STEP, -RENDERER_STEP].into_iter().enumerate() {
                    f[j] = flat[j] + delta;
                    bumped.surfels[i].read_flat(&f);
                    if composite_structure(&bumped, &camera, &config)? != structure {
                        continue 'cases;
                    }
                    values[k] = objective(&bumped)?;
                }
                report.record(a, (values[0] - values[1]) / (2.0 * RENDERER_STEP));
            }
        }
        report.cases = 1;
        return Ok(report);
    }
    Err(Error::InvalidConfig("every sampled renderer case straddled a discontinuity".into()))
}
