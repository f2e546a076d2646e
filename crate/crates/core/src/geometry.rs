//! Surfel parameterization, pinhole cameras and ray/surfel intersection.
//!
//! A surfel is a planar elliptical Gaussian. Its local frame is given by the
//! columns `(t_u, t_v, n)` of the rotation matrix of a quaternion, and a point
//! on the surfel is `center + s_u * u * t_u + s_v * v * t_v`. Intersections are
//! computed directly against the surfel plane in camera space; the resulting
//! `(u, v)` are in units of standard deviations so the Gaussian falloff is
//! `exp(-(u² + v²) / 2)`.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Rays with `|dir · n| / |dir|` below this are treated as grazing.
pub const GRAZING_EPS: f64 = 1e-9;
/// Minimum camera-space depth of an accepted intersection.
pub const NEAR_PLANE: f64 = 1e-4;
/// Default uv cutoff radius in standard deviations.
pub const DEFAULT_UV_CUTOFF: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SurfelGeometry {
    pub center: Vector3<f64>,
    /// Raw quaternion `(w, x, y, z)`. Normalized on use and after every optimizer step.
    pub rotation: [f64; 4],
    /// Natural log of the tangential scales `(s_u, s_v)`.
    pub log_scale: [f64; 2],
}

impl SurfelGeometry {
    pub fn new(center: Vector3<f64>, rotation: UnitQuaternion<f64>, scale: [f64; 2]) -> Self {
        let q = rotation.into_inner();
        Self {
            center,
            rotation: [q.w, q.i, q.j, q.k],
            log_scale: [scale[0].ln(), scale[1].ln()],
        }
    }

    pub fn scale(&self) -> [f64; 2] {
        [self.log_scale[0].exp(), self.log_scale[1].exp()]
    }

    /// Orthonormal frame with columns `(t_u, t_v, n)`.
    pub fn frame(&self) -> Matrix3<f64> {
        quaternion_to_matrix(self.rotation)
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.frame().column(2).into_owned()
    }

    pub fn normalize_rotation(&mut self) {
        let norm = self.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for c in &mut self.rotation {
                *c /= norm;
            }
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    /// World-space point at object coordinates `(u, v)`.
    pub fn point_at(&self, uv: [f64; 2]) -> Vector3<f64> {
        let f = self.frame();
        let s = self.scale();
        self.center + f.column(0) * (s[0] * uv[0]) + f.column(1) * (s[1] * uv[1])
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|c| c.is_finite())
            && self.rotation.iter().all(|c| c.is_finite())
            && self.log_scale.iter().all(|c| c.is_finite())
    }

    /// Apply a rigid motion to the surfel.
    pub fn transformed(&self, motion: &Isometry3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        ));
        let rotated = motion.rotation * q;
        let r = rotated.into_inner();
        Self {
            center: motion.transform_point(&self.center.into()).coords,
            rotation: [r.w, r.i, r.j, r.k],
            log_scale: self.log_scale,
        }
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / norm);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull a cotangent on the rotation matrix back to the raw quaternion,
/// including the normalization step.
pub fn quaternion_to_matrix_vjp(q: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / norm);
    let g = |r: usize, c: usize| d_r[(r, c)];

    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));

    let d_hat = [dw, dx, dy, dz];
    let q_hat = [w, x, y, z];
    let dot: f64 = d_hat.iter().zip(&q_hat).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (d_hat[i] - dot * q_hat[i]) / norm)
}

/// Pinhole camera. Camera space follows the usual computer-vision convention:
/// +x right, +y down, +z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: Isometry3<f64>,
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_from_camera: Isometry3<f64>,
    ) -> Result<Self> {
        let camera = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            world_from_camera,
        };
        camera.validate()?;
        Ok(camera)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point is not finite".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` towards `target`; `up` is a world-space hint
    /// for the image "up" direction (camera -y).
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_columns(&[right, down, forward]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        Self::new(
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            Isometry3::from_parts(Translation3::from(eye), rotation),
        )
    }

    pub fn position(&self) -> Vector3<f64> {
        self.world_from_camera.translation.vector
    }

    /// Camera-to-world rotation matrix.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.world_from_camera
            .rotation
            .to_rotation_matrix()
            .into_inner()
    }

    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation_matrix().column(2).into_owned()
    }

    /// Camera-space ray direction through an image-plane point, scaled so that
    /// its z component is 1. Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub fn ray_direction(&self, pixel: [f64; 2]) -> Vector3<f64> {
        Vector3::new(
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_from_camera
            .inverse_transform_point(&(*p).into())
            .coords
    }

    /// Project a camera-space point to image coordinates.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<[f64; 2]> {
        if p_cam.z <= NEAR_PLANE {
            return None;
        }
        Some([
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ])
    }

    pub fn transformed(&self, motion: &Isometry3<f64>) -> Self {
        Self {
            world_from_camera: motion * self.world_from_camera,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntersectionSample {
    /// Object-space point `p = (u, v)` in standard deviations.
    pub uv: [f64; 2],
    /// Camera-space z of the hit.
    pub depth: f64,
    pub gaussian_weight: f64,
}

/// Gradient with respect to the stored geometry parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeometryGrad {
    pub center: Vector3<f64>,
    pub rotation: [f64; 4],
    pub log_scale: [f64; 2],
}

/// A surfel expressed in one camera's frame, ready for per-pixel intersection.
#[derive(Clone, Debug)]
pub struct SurfelView {
    pub center_cam: Vector3<f64>,
    pub t_u: Vector3<f64>,
    pub t_v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub scale: [f64; 2],
    n_dot_c: f64,
    cutoff_sq: f64,
}

/// Accumulated cotangents on the camera-frame quantities of a [`SurfelView`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SurfelViewGrad {
    pub center_cam: Vector3<f64>,
    pub t_u: Vector3<f64>,
    pub t_v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub log_scale: [f64; 2],
}

impl SurfelViewGrad {
    pub fn add(&mut self, other: &SurfelViewGrad) {
        self.center_cam += other.center_cam;
        self.t_u += other.t_u;
        self.t_v += other.t_v;
        self.normal += other.normal;
        self.log_scale[0] += other.log_scale[0];
        self.log_scale[1] += other.log_scale[1];
    }
}

impl SurfelView {
    pub fn new(camera: &Camera, surfel: &SurfelGeometry, uv_cutoff: f64) -> Self {
        let cam_rot_t = camera.rotation_matrix().transpose();
        let frame = cam_rot_t * surfel.frame();
        let center_cam = camera.world_to_camera(&surfel.center);
        let normal: Vector3<f64> = frame.column(2).into_owned();
        Self {
            center_cam,
            t_u: frame.column(0).into_owned(),
            t_v: frame.column(1).into_owned(),
            n_dot_c: normal.dot(&center_cam),
            normal,
            scale: surfel.scale(),
            cutoff_sq: uv_cutoff * uv_cutoff,
        }
    }

    /// Intersect with a camera-space ray direction from [`Camera::ray_direction`].
    #[inline]
    pub fn intersect(&self, dir: &Vector3<f64>) -> Option<IntersectionSample> {
        let nd = self.normal.dot(dir);
        if nd.abs() < GRAZING_EPS * dir.norm() {
            return None;
        }
        let t = self.n_dot_c / nd;
        if t <= NEAR_PLANE {
            return None;
        }
        let r = dir * t - self.center_cam;
        let u = self.t_u.dot(&r) / self.scale[0];
        let v = self.t_v.dot(&r) / self.scale[1];
        let rr = u * u + v * v;
        if rr > self.cutoff_sq {
            return None;
        }
        Some(IntersectionSample {
            uv: [u, v],
            depth: t * dir.z,
            gaussian_weight: (-0.5 * rr).exp(),
        })
    }

    /// Accumulate the vector-Jacobian product of [`SurfelView::intersect`]
    /// for cotangents on `uv` and on the Gaussian weight.
    #[inline]
    pub fn accumulate_vjp(
        &self,
        dir: &Vector3<f64>,
        sample: &IntersectionSample,
        d_uv: [f64; 2],
        d_weight: f64,
        grad: &mut SurfelViewGrad,
    ) {
        let [u, v] = sample.uv;
        let du = d_uv[0] - d_weight * sample.gaussian_weight * u;
        let dv = d_uv[1] - d_weight * sample.gaussian_weight * v;

        let nd = self.normal.dot(dir);
        let t = self.n_dot_c / nd;
        let r = dir * t - self.center_cam;

        let a = du / self.scale[0];
        let b = dv / self.scale[1];
        let g_r = self.t_u * a + self.t_v * b;
        let gd = g_r.dot(dir);

        grad.log_scale[0] -= du * u;
        grad.log_scale[1] -= dv * v;
        grad.t_u += r * a;
        grad.t_v += r * b;
        grad.center_cam += self.normal * (gd / nd) - g_r;
        grad.normal -= r * (gd / nd);
    }

    /// Map the camera-frame cotangents back onto the stored surfel parameters.
    pub fn finish_vjp(
        &self,
        camera: &Camera,
        surfel: &SurfelGeometry,
        grad: &SurfelViewGrad,
    ) -> GeometryGrad {
        let cam_rot = camera.rotation_matrix();
        let d_frame = cam_rot
            * Matrix3::from_columns(&[grad.t_u, grad.t_v, grad.normal]);
        GeometryGrad {
            center: cam_rot * grad.center_cam,
            rotation: quaternion_to_matrix_vjp(surfel.rotation, &d_frame),
            log_scale: grad.log_scale,
        }
    }

    /// Conservative pixel rectangle `[x0, x1) × [y0, y1)` covering the cutoff disc.
    pub fn screen_rect(&self, camera: &Camera) -> Option<[usize; 4]> {
        let k = self.cutoff_sq.sqrt();
        let eu = self.t_u * (k * self.scale[0]);
        let ev = self.t_v * (k * self.scale[1]);
        let corners = [
            self.center_cam + eu + ev,
            self.center_cam + eu - ev,
            self.center_cam - eu + ev,
            self.center_cam - eu - ev,
        ];
        let in_front = corners.iter().filter(|c| c.z > NEAR_PLANE).count();
        if in_front == 0 {
            return None;
        }
        if in_front < 4 {
            return Some([0, camera.width, 0, camera.height]);
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for c in &corners {
            let p = camera.project(c)?;
            for i in 0..2 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min(hi as f64) as usize };
        let x0 = clamp(min[0].floor() - 1.0, camera.width);
        let x1 = clamp(max[0].ceil() + 1.0, camera.width);
        let y0 = clamp(min[1].floor() - 1.0, camera.height);
        let y1 = clamp(max[1].ceil() + 1.0, camera.height);
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        Some([x0, x1, y0, y1])
    }
}

/// Intersect the ray through `pixel` (image-plane coordinates) with a surfel.
pub fn intersect(
    camera: &Camera,
    pixel: [f64; 2],
    surfel: &SurfelGeometry,
    uv_cutoff: f64,
) -> Option<IntersectionSample> {
    SurfelView::new(camera, surfel, uv_cutoff).intersect(&camera.ray_direction(pixel))
}

/// Vector-Jacobian product of [`intersect`] with respect to center, raw
/// quaternion and log-scales. Returns zeros when the ray misses.
pub fn intersect_vjp(
    camera: &Camera,
    pixel: [f64; 2],
    surfel: &SurfelGeometry,
    uv_cutoff: f64,
    d_uv: [f64; 2],
    d_weight: f64,
) -> GeometryGrad {
    let view = SurfelView::new(camera, surfel, uv_cutoff);
    let dir = camera.ray_direction(pixel);
    let Some(sample) = view.intersect(&dir) else {
        return GeometryGrad::default();
    };
    let mut grad = SurfelViewGrad::default();
    view.accumulate_vjp(&dir, &sample, d_uv, d_weight, &mut grad);
    view.finish_vjp(camera, surfel, &grad)
}
