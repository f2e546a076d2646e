//! Dataset manifests: a JSON camera file plus one image per frame.
//!
//! ```json
//! {"w": 64, "h": 64, "fl_x": 78.0, "fl_y": 78.0, "cx": 32.0, "cy": 32.0,
//!  "frames": [{"file": "view_000.png", "transform": [[1,0,0,0],[0,1,0,0],[0,0,1,-3],[0,0,0,1]]}]}
//! ```
//!
//! `transform` is the 4x4 world-from-camera matrix, row-major (nested rows or
//! 16 flat values). With the default `"camera_convention": "opencv"` the
//! camera looks down +z with +y pointing down the image; `"opengl"` (Blender
//! style: -z forward, +y up) is converted on load. Intrinsics may be given
//! globally or per frame.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgb};
use nalgebra::{Isometry3, Matrix3, Matrix4, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use supersplat::training::{InitPoint, TrainingView};
use supersplat::{Camera, Dataset, Image};

use crate::report::{read_json, write_json};
use crate::{Result, WorkbenchError};

/// Largest tolerated deviation of a pose's rotation block from orthonormal.
pub const RIGID_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraConvention {
    #[default]
    Opencv,
    Opengl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Transform {
    Rows([[f64; 4]; 4]),
    Flat([f64; 16]),
}

impl Transform {
    pub fn matrix(&self) -> Matrix4<f64> {
        match self {
            Transform::Rows(r) => Matrix4::from_fn(|i, j| r[i][j]),
            Transform::Flat(f) => Matrix4::from_fn(|i, j| f[4 * i + j]),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let m = iso.to_homogeneous();
        Transform::Rows([0, 1, 2, 3].map(|i| [0, 1, 2, 3].map(|j| m[(i, j)])))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub file: String,
    pub transform: Transform,
    #[serde(flatten)]
    pub intrinsics: Intrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub intrinsics: Intrinsics,
    pub frames: Vec<Frame>,
    #[serde(default)]
    pub srgb: bool,
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default)]
    pub camera_convention: CameraConvention,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub init_points: Vec<InitPoint>,
}

/// A single camera description, as accepted by `render --pose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    #[serde(flatten)]
    pub intrinsics: Intrinsics,
    pub transform: Transform,
    #[serde(default)]
    pub camera_convention: CameraConvention,
    #[serde(default)]
    pub background: [f64; 3],
}

impl PoseFile {
    pub fn load(path: &Path) -> Result<(Camera, [f64; 3])> {
        let pose: PoseFile = read_json(path)?;
        let camera = build_camera(&pose.intrinsics, &Intrinsics::default(), &pose.transform, pose.camera_convention)
            .map_err(|message| WorkbenchError::Manifest {
                path: path.to_path_buf(),
                message,
            })?;
        Ok((camera, pose.background))
    }
}

/// Camera for one frame; frame intrinsics override global ones.
fn build_camera(
    frame: &Intrinsics,
    global: &Intrinsics,
    transform: &Transform,
    convention: CameraConvention,
) -> std::result::Result<Camera, String> {
    let w = frame.w.or(global.w).ok_or("missing image width \"w\"")?;
    let h = frame.h.or(global.h).ok_or("missing image height \"h\"")?;
    let fx = frame.fl_x.or(global.fl_x).ok_or("missing focal length \"fl_x\"")?;
    let fy = frame.fl_y.or(global.fl_y).unwrap_or(fx);
    let cx = frame.cx.or(global.cx).unwrap_or(w as f64 / 2.0);
    let cy = frame.cy.or(global.cy).unwrap_or(h as f64 / 2.0);
    let pose = rigid_from_matrix(&transform.matrix())?;
    let pose = match convention {
        CameraConvention::Opencv => pose,
        CameraConvention::Opengl => {
            // Flip camera y and z to go from (right, up, back) to (right, down, forward).
            let flip = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
            pose * Isometry3::from_parts(Translation3::identity(), flip)
        }
    };
    Camera::new(w, h, fx, fy, cx, cy, pose).map_err(|e| e.to_string())
}

/// Interpret a homogeneous matrix as a rigid motion, rejecting anything
/// further than [`RIGID_TOLERANCE`] from one.
pub fn rigid_from_matrix(m: &Matrix4<f64>) -> std::result::Result<Isometry3<f64>, String> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err("transform has non-finite entries".into());
    }
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)] - 1.0];
    if bottom.iter().any(|v| v.abs() > RIGID_TOLERANCE) {
        return Err("transform's last row must be [0, 0, 0, 1]".into());
    }
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > RIGID_TOLERANCE || r.determinant() <= 0.0 {
        return Err(format!(
            "transform is not a rigid motion (orthonormality error {ortho:.3e}, determinant {:.6})",
            r.determinant()
        ));
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    Ok(Isometry3::from_parts(Translation3::from(t), rotation))
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Decode a PNG or PPM file to floats in [0, 1].
pub fn read_image(path: &Path, srgb: bool) -> Result<Image> {
    let img = image::ImageReader::open(path)
        .map_err(|source| WorkbenchError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| WorkbenchError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| WorkbenchError::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let decode = |v: f64| if srgb { srgb_to_linear(v) } else { v };
    let pixels: Vec<[f64; 3]> = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|c| decode(c as f64 / 255.0)))
            .collect(),
        _ => img
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| decode(c as f64 / 65535.0)))
            .collect(),
    };
    Ok(Image::from_pixels(w, h, pixels)?)
}

/// Quantize to 8 bits (after clamping, and sRGB encoding if requested) and
/// write a PNG.
pub fn write_png(path: &Path, image: &Image, srgb: bool) -> Result<()> {
    let bytes: Vec<u8> = image
        .pixels()
        .iter()
        .flat_map(|p| {
            p.map(|c| {
                let c = c.clamp(0.0, 1.0);
                let c = if srgb { linear_to_srgb(c) } else { c };
                (c * 255.0).round() as u8
            })
        })
        .collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(image.width() as u32, image.height() as u32, bytes)
        .expect("buffer matches image size");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| WorkbenchError::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub dataset: Dataset,
    pub files: Vec<PathBuf>,
}

/// Load a manifest and decode every referenced image. Image paths are
/// relative to the manifest's directory.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset> {
    let manifest: Manifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |message: String| WorkbenchError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    if manifest.frames.is_empty() {
        return Err(bad("manifest has no frames".into()));
    }
    let mut views = Vec::with_capacity(manifest.frames.len());
    let mut files = Vec::with_capacity(manifest.frames.len());
    let mut size = None;
    for (i, frame) in manifest.frames.iter().enumerate() {
        let camera = build_camera(&frame.intrinsics, &manifest.intrinsics, &frame.transform, manifest.camera_convention)
            .map_err(|m| bad(format!("frame {i}: {m}")))?;
        let file = base.join(&frame.file);
        if !file.is_file() {
            return Err(bad(format!("frame {i}: image file {} not found", file.display())));
        }
        let image = read_image(&file, manifest.srgb)?;
        if (image.width(), image.height()) != (camera.width, camera.height) {
            return Err(bad(format!(
                "frame {i}: image {} is {}x{} but the camera expects {}x{}",
                file.display(),
                image.width(),
                image.height(),
                camera.width,
                camera.height
            )));
        }
        match size {
            None => size = Some((camera.width, camera.height)),
            Some(s) if s != (camera.width, camera.height) => {
                return Err(bad(format!(
                    "frame {i}: resolution {}x{} differs from the first frame's {}x{}",
                    camera.width, camera.height, s.0, s.1
                )));
            }
            Some(_) => {}
        }
        views.push(TrainingView { camera, image });
        files.push(file);
    }
    let dataset = Dataset {
        views,
        background: manifest.background,
        init_points: manifest.init_points.clone(),
    };
    Ok(LoadedDataset {
        manifest,
        dataset,
        files,
    })
}

/// Write images and manifest for `views` into `dir` (as `view_NNN.png` and
/// `transforms.json`). Returns the manifest path.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(crate::io_err(dir))?;
    let first = &dataset.views.first().ok_or(supersplat::Error::EmptyDataset)?.camera;
    let mut frames = Vec::new();
    for (i, v) in dataset.views.iter().enumerate() {
        let file = format!("view_{i:03}.png");
        write_png(&dir.join(&file), &v.image, false)?;
        let c = &v.camera;
        let intrinsics = if (c.width, c.height, c.fx, c.fy, c.cx, c.cy)
            == (first.width, first.height, first.fx, first.fy, first.cx, first.cy)
        {
            Intrinsics::default()
        } else {
            Intrinsics {
                w: Some(c.width),
                h: Some(c.height),
                fl_x: Some(c.fx),
                fl_y: Some(c.fy),
                cx: Some(c.cx),
                cy: Some(c.cy),
            }
        };
        frames.push(Frame {
            file,
            transform: Transform::from_isometry(&c.world_from_camera),
            intrinsics,
        });
    }
    let manifest = Manifest {
        intrinsics: Intrinsics {
            w: Some(first.width),
            h: Some(first.height),
            fl_x: Some(first.fx),
            fl_y: Some(first.fy),
            cx: Some(first.cx),
            cy: Some(first.cy),
        },
        frames,
        srgb: false,
        background: dataset.background,
        camera_convention: CameraConvention::Opencv,
        init_points: dataset.init_points.clone(),
    };
    let path = dir.join("transforms.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
