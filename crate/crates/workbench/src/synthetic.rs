//! Synthetic ground truth rendered by a small analytic ray tracer.
//!
//! The tracer intersects camera rays with exact primitives (a disc, a quad,
//! a sphere) and box-filters `SUPERSAMPLE x SUPERSAMPLE` rays per pixel. It
//! shares nothing with the splatting renderer beyond the camera model.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use supersplat::training::{InitPoint, TrainingView};
use supersplat::{Camera, Dataset, Image};

use crate::dataset::save_dataset;
use crate::Result;

pub const SUPERSAMPLE: usize = 4;
pub const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Disc4,
    TexturedQuad,
    CheckerSphere,
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "disc4" => Ok(Self::Disc4),
            "textured_quad" => Ok(Self::TexturedQuad),
            "checker_sphere" => Ok(Self::CheckerSphere),
            other => Err(format!("unknown synthetic kind {other:?} (disc4, textured_quad, checker_sphere)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    /// Image width and height in pixels.
    pub size: usize,
    pub views: usize,
    /// Number of seed points (ignored for `disc4`, which uses one).
    pub init_points: usize,
}

impl SyntheticParams {
    pub fn default_for(kind: SyntheticKind) -> Self {
        match kind {
            SyntheticKind::Disc4 => Self {
                size: 64,
                views: 1,
                init_points: 1,
            },
            SyntheticKind::TexturedQuad => Self {
                size: 128,
                views: 8,
                init_points: 100,
            },
            SyntheticKind::CheckerSphere => Self {
                size: 128,
                views: 8,
                init_points: 200,
            },
        }
    }
}

/// Quadrant colors of the disc, counter-clockwise from +x,+y.
pub const DISC_COLORS: [[f64; 3]; 4] = [
    [0.9, 0.15, 0.1],
    [0.1, 0.75, 0.2],
    [0.15, 0.25, 0.9],
    [0.95, 0.85, 0.1],
];

pub const DISC_DISTANCE: f64 = 3.0;
pub const DISC_RADIUS: f64 = 1.0;
pub const QUAD_CELLS: usize = 12;
pub const SPHERE_RADIUS: f64 = 1.0;
pub const ORBIT_DISTANCE: f64 = 3.0;

/// Anything a ray can hit: returns the radiance along the ray, or `None`.
trait Shade {
    fn shade(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<[f64; 3]>;
}

/// Disc of radius 1 in the z = 0 plane, split into four colored quadrants.
struct Disc;

impl Shade for Disc {
    fn shade(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<[f64; 3]> {
        if d.z.abs() < 1e-12 {
            return None;
        }
        let t = -o.z / d.z;
        if t <= 0.0 {
            return None;
        }
        let p = o + d * t;
        if p.x * p.x + p.y * p.y > DISC_RADIUS * DISC_RADIUS {
            return None;
        }
        let q = match (p.x >= 0.0, p.y >= 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        Some(DISC_COLORS[q])
    }
}

/// The square [-1, 1]^2 in the z = 0 plane with a grid of random colors.
struct Quad {
    cells: Vec<[f64; 3]>,
}

impl Quad {
    fn new(rng: &mut impl Rng) -> Self {
        let cells = (0..QUAD_CELLS * QUAD_CELLS)
            .map(|_| [0, 1, 2].map(|_| rng.gen_range(0.05..0.95)))
            .collect();
        Self { cells }
    }

    fn texture(&self, x: f64, y: f64) -> [f64; 3] {
        let cell = |c: f64| (((c + 1.0) / 2.0 * QUAD_CELLS as f64).floor() as usize).min(QUAD_CELLS - 1);
        self.cells[cell(y) * QUAD_CELLS + cell(x)]
    }
}

impl Shade for Quad {
    fn shade(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<[f64; 3]> {
        if d.z.abs() < 1e-12 {
            return None;
        }
        let t = -o.z / d.z;
        if t <= 0.0 {
            return None;
        }
        let p = o + d * t;
        if p.x.abs() > 1.0 || p.y.abs() > 1.0 {
            return None;
        }
        Some(self.texture(p.x, p.y))
    }
}

/// Unit sphere at the origin with a longitude/latitude checkerboard.
struct CheckerSphere;

impl CheckerSphere {
    fn texture(p: &Vector3<f64>) -> [f64; 3] {
        let lon = p.y.atan2(p.x);
        let lat = (p.z / SPHERE_RADIUS).clamp(-1.0, 1.0).asin();
        let i = ((lon + std::f64::consts::PI) / (std::f64::consts::PI / 6.0)).floor() as i64;
        let j = ((lat + std::f64::consts::FRAC_PI_2) / (std::f64::consts::PI / 6.0)).floor() as i64;
        if (i + j).rem_euclid(2) == 0 {
            [0.9, 0.85, 0.8]
        } else {
            [0.2, 0.3, 0.6]
        }
    }
}

impl Shade for CheckerSphere {
    fn shade(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<[f64; 3]> {
        // |o + t d|^2 = R^2
        let a = d.norm_squared();
        let b = 2.0 * o.dot(d);
        let c = o.norm_squared() - SPHERE_RADIUS * SPHERE_RADIUS;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        if t <= 0.0 {
            return None;
        }
        Some(Self::texture(&(o + d * t)))
    }
}

fn trace(camera: &Camera, scene: &dyn Shade, background: [f64; 3]) -> Image {
    let mut img = Image::new(camera.width, camera.height, background);
    let origin = camera.position();
    let rot = camera.rotation_matrix();
    let n = SUPERSAMPLE as f64;
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / n;
                    let py = y as f64 + (sy as f64 + 0.5) / n;
                    let d_cam = Vector3::new((px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0);
                    let c = scene.shade(&origin, &(rot * d_cam)).unwrap_or(background);
                    for ch in 0..3 {
                        acc[ch] += c[ch];
                    }
                }
            }
            img.set(x, y, acc.map(|a| a / (n * n)));
        }
    }
    img
}

/// Focal length that makes an object of `radius` at `distance` span
/// `fill` of the half-image.
fn focal_for(size: usize, radius: f64, distance: f64, fill: f64) -> f64 {
    fill * (size as f64 / 2.0) * distance / radius
}

/// Cameras on a cone around -z looking at the origin.
fn orbit(sizes: usize, views: usize, focal: f64, tilt_deg: f64) -> Result<Vec<Camera>> {
    let tilt = tilt_deg.to_radians();
    (0..views)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / views as f64;
            let eye = ORBIT_DISTANCE
                * Vector3::new(tilt.sin() * phi.cos(), tilt.sin() * phi.sin(), -tilt.cos());
            Ok(Camera::look_at(sizes, sizes, focal, eye, Vector3::zeros(), Vector3::y())?)
        })
        .collect()
}

/// Generate the dataset in memory.
pub fn generate(kind: SyntheticKind, params: &SyntheticParams, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = params.size;
    match kind {
        SyntheticKind::Disc4 => {
            let focal = focal_for(size, DISC_RADIUS, DISC_DISTANCE, 0.8);
            let camera = Camera::look_at(
                size,
                size,
                focal,
                Vector3::new(0.0, 0.0, -DISC_DISTANCE),
                Vector3::zeros(),
                Vector3::y(),
            )?;
            let image = trace(&camera, &Disc, BACKGROUND);
            Ok(Dataset {
                views: vec![TrainingView { camera, image }],
                background: BACKGROUND,
                init_points: vec![InitPoint {
                    position: [0.0; 3],
                    color: [0.5; 3],
                    scale: Some(0.5),
                    normal: Some([0.0, 0.0, -1.0]),
                }],
            })
        }
        SyntheticKind::TexturedQuad => {
            let quad = Quad::new(&mut rng);
            let focal = focal_for(size, 2f64.sqrt(), ORBIT_DISTANCE, 0.9);
            let cameras = orbit(size, params.views, focal, 20.0)?;
            let views = cameras
                .into_iter()
                .map(|camera| {
                    let image = trace(&camera, &quad, BACKGROUND);
                    TrainingView { camera, image }
                })
                .collect();
            let init_points = (0..params.init_points)
                .map(|_| {
                    let (x, y) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    InitPoint {
                        position: [x, y, 0.0],
                        color: quad.texture(x, y),
                        scale: None,
                        normal: Some([0.0, 0.0, -1.0]),
                    }
                })
                .collect();
            Ok(Dataset {
                views,
                background: BACKGROUND,
                init_points,
            })
        }
        SyntheticKind::CheckerSphere => {
            let focal = focal_for(size, SPHERE_RADIUS, ORBIT_DISTANCE, 0.7);
            let cameras = orbit(size, params.views, focal, 60.0)?;
            let views = cameras
                .into_iter()
                .map(|camera| {
                    let image = trace(&camera, &CheckerSphere, BACKGROUND);
                    TrainingView { camera, image }
                })
                .collect();
            let init_points = (0..params.init_points)
                .map(|_| {
                    let v = loop {
                        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                        if (1e-3..=1.0).contains(&v.norm()) {
                            break v.normalize();
                        }
                    };
                    let p = v * SPHERE_RADIUS;
                    InitPoint {
                        position: p.into(),
                        color: CheckerSphere::texture(&p),
                        scale: None,
                        normal: Some(v.into()),
                    }
                })
                .collect();
            Ok(Dataset {
                views,
                background: BACKGROUND,
                init_points,
            })
        }
    }
}

/// Generate and write a dataset to `dir`; returns the manifest path.
pub fn make_synthetic(kind: SyntheticKind, params: &SyntheticParams, seed: u64, dir: &Path) -> Result<PathBuf> {
    let dataset = generate(kind, params, seed)?;
    save_dataset(dir, &dataset)
}

/// Silhouette radius in pixels of a sphere of radius `r` at distance `d`
/// seen by a pinhole camera of focal length `f` looking at its center.
pub fn sphere_silhouette_radius(f: f64, r: f64, d: f64) -> f64 {
    f * r / (d * d - r * r).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_quadrants_differ() {
        let d = generate(SyntheticKind::Disc4, &SyntheticParams::default_for(SyntheticKind::Disc4), 0).unwrap();
        let img = &d.views[0].image;
        assert_eq!((img.width(), img.height()), (64, 64));
        let a = img.get(16, 16);
        let b = img.get(48, 48);
        let nearest = |p: [f64; 3]| {
            (0..4)
                .find(|&q| (0..3).all(|c| (p[c] - DISC_COLORS[q][c]).abs() < 1e-12))
                .expect("pixel matches a quadrant color")
        };
        assert_ne!(nearest(a), nearest(b));
        assert_eq!(img.get(0, 0), BACKGROUND);
    }

    #[test]
    fn sphere_silhouette_matches_projection() {
        let p = SyntheticParams {
            views: 1,
            ..SyntheticParams::default_for(SyntheticKind::CheckerSphere)
        };
        let d = generate(SyntheticKind::CheckerSphere, &p, 0).unwrap();
        let v = &d.views[0];
        let expect = sphere_silhouette_radius(v.camera.fx, SPHERE_RADIUS, ORBIT_DISTANCE);
        // Walk right from the principal point along the center row.
        let y = (v.camera.cy - 0.5) as usize;
        let x0 = (v.camera.cx - 0.5) as usize;
        let edge = (x0..v.camera.width)
            .find(|&x| v.image.get(x, y) == BACKGROUND)
            .unwrap();
        let measured = edge as f64 - v.camera.cx;
        assert!((measured - expect).abs() <= 1.0, "measured {measured}, expected {expect}");
    }
}
