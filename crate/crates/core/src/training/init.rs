use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::appearance::{Appearance, ShCoefficients, VariantSpec};
use crate::geometry::{Camera, SurfelGeometry};
use crate::scene::{Scene, Surfel};

/// Seed point for one surfel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPoint {
    pub position: [f64; 3],
    #[serde(default = "gray")]
    pub color: [f64; 3],
    /// Isotropic starting scale; estimated from neighbours when absent.
    #[serde(default)]
    pub scale: Option<f64>,
    /// Surfel normal; a random orientation is drawn when absent.
    #[serde(default)]
    pub normal: Option<[f64; 3]>,
}

fn gray() -> [f64; 3] {
    [0.5; 3]
}

const FALLBACK_SCALE: f64 = 0.1;
const MIN_SCALE: f64 = 1e-7;

/// Build the starting scene: one near-constant surfel per point.
pub fn initialize_scene(
    points: &[InitPoint],
    variant: &VariantSpec,
    sh_degree: u8,
    base_opacity: f64,
    rng: &mut impl Rng,
) -> Scene {
    let scales = neighbour_scales(points);
    let surfels = points
        .iter()
        .zip(scales)
        .map(|(p, est)| {
            let scale = p.scale.unwrap_or(est).max(MIN_SCALE);
            let rotation = match p.normal {
                Some(n) => rotation_to_normal(Vector3::from(n)),
                None => random_rotation(rng),
            };
            Surfel {
                geometry: SurfelGeometry::new(Vector3::from(p.position), rotation, [scale, scale]),
                sh: ShCoefficients::from_rgb(sh_degree, p.color),
                appearance: Appearance::initial(variant, base_opacity, rng),
            }
        })
        .collect();
    Scene::new(surfels)
}

/// Root mean squared distance to the three nearest neighbours.
fn neighbour_scales(points: &[InitPoint]) -> Vec<f64> {
    let pos: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::from(p.position)).collect();
    pos.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<f64> = pos
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| (a - b).norm_squared())
                .collect();
            if d.is_empty() {
                return FALLBACK_SCALE;
            }
            d.sort_by(f64::total_cmp);
            let k = d.len().min(3);
            (d[..k].iter().sum::<f64>() / k as f64).sqrt()
        })
        .collect()
}

fn rotation_to_normal(n: Vector3<f64>) -> UnitQuaternion<f64> {
    let z = Vector3::z();
    UnitQuaternion::rotation_between(&z, &n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
        let q = Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Center and radius of the camera rig, padded by ten percent. Position
/// learning rates and the clone/split size threshold are relative to it.
pub fn camera_extent(cameras: &[&Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let center = cameras.iter().map(|c| c.position()).sum::<Vector3<f64>>() / cameras.len() as f64;
    let radius = cameras
        .iter()
        .map(|c| (c.position() - center).norm())
        .fold(0.0, f64::max)
        * 1.1;
    if radius > 1e-6 {
        radius
    } else {
        // A single viewpoint has no spread; fall back to its viewing distance scale.
        1.0
    }
}

/// Random points in front of the cameras, used when a dataset has no seed points.
pub fn random_points(cameras: &[&Camera], count: usize, rng: &mut impl Rng) -> Vec<InitPoint> {
    let focus = cameras
        .iter()
        .map(|c| c.position() + c.optical_axis() * 3.0)
        .sum::<Vector3<f64>>()
        / cameras.len().max(1) as f64;
    let half = cameras
        .iter()
        .map(|c| (c.position() - focus).norm())
        .fold(0.0, f64::max)
        .max(1.0)
        * 0.5;
    (0..count)
        .map(|_| InitPoint {
            position: [0, 1, 2].map(|i| focus[i] + rng.gen_range(-half..half)),
            color: [0, 1, 2].map(|_| rng.gen_range(0.0..1.0)),
            scale: None,
            normal: None,
        })
        .collect()
}
