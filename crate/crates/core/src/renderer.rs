//! Tiled front-to-back compositing of spatially varying surfels and its exact
//! reverse-mode gradient.
//!
//! Both passes run per tile in parallel. A tile owns private output and
//! gradient staging; the staging is merged in tile order afterwards, so the
//! results do not depend on the number of threads.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::sh::{eval_sh_limited, eval_sh_vjp, MAX_SH_DEGREE};
use crate::appearance::GEOMETRY_PARAMS;
use crate::error::{Error, Result};
use crate::geometry::{Camera, IntersectionSample, SurfelView, SurfelViewGrad, DEFAULT_UV_CUTOFF};
use crate::image::Image;
use crate::scene::{Scene, Surfel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f64; 3],
    pub transmittance_floor: f64,
    pub alpha_ceiling: f64,
    pub alpha_floor: f64,
    pub uv_cutoff: f64,
    pub tile_size: usize,
    /// Composite `G·F_α` without clamping `F_α` at zero. Samples with
    /// `|alpha| < alpha_floor` are skipped; transmittance may exceed one.
    pub allow_signed_alpha: bool,
    /// Highest SH band used; `None` uses every stored band.
    pub sh_degree_limit: Option<u8>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            transmittance_floor: 1e-4,
            alpha_ceiling: 0.99,
            alpha_floor: 1.0 / 255.0,
            uv_cutoff: DEFAULT_UV_CUTOFF,
            tile_size: 16,
            allow_signed_alpha: false,
            sh_degree_limit: None,
        }
    }
}

impl RenderConfig {
    pub fn with_background(background: [f64; 3]) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.alpha_floor
            && self.alpha_floor < self.alpha_ceiling
            && self.alpha_ceiling < 1.0
            && self.transmittance_floor > 0.0
            && self.transmittance_floor < 1.0
            && self.uv_cutoff > 0.0
            && self.tile_size >= 1
            && self.background.iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("render config out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// Linear, unclamped color.
    pub color: Image,
    /// `1 - T_final` per pixel.
    pub alpha_accum: Vec<f64>,
    /// Number of composited samples per pixel.
    pub contributor_count: Vec<u32>,
}

/// Gradients for every trainable scalar of a scene, plus per-surfel
/// screen-space positional gradient norms (in NDC units) for densification.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    /// Same shape as the scene's surfels; every trainable field holds its gradient.
    pub surfels: Vec<Surfel>,
    pub screen_grad: Vec<f64>,
    /// Whether the surfel composited into at least one pixel.
    pub visible: Vec<bool>,
}

impl GradientBuffer {
    pub fn zeros_like(scene: &Scene) -> Self {
        Self {
            surfels: scene.surfels.iter().map(Surfel::zeros_like).collect(),
            screen_grad: vec![0.0; scene.len()],
            visible: vec![false; scene.len()],
        }
    }

    pub fn flat(&self, index: usize) -> Vec<f64> {
        self.surfels[index].to_flat()
    }

    pub fn is_finite(&self) -> bool {
        self.surfels.iter().all(Surfel::is_finite) && self.screen_grad.iter().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.surfels
            .iter()
            .all(|s| s.to_flat().iter().all(|&g| g == 0.0))
            && self.screen_grad.iter().all(|&g| g == 0.0)
    }
}

struct Tile {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    surfels: Vec<usize>,
}

struct Prepared<'a> {
    scene: &'a Scene,
    views: Vec<Option<SurfelView>>,
    view_dirs: Vec<Vector3<f64>>,
    sh_colors: Vec<[f64; 3]>,
    sh_limit: u8,
    tiles: Vec<Tile>,
}

#[derive(Clone, Copy)]
struct Hit {
    local: usize,
    index: usize,
    sample: IntersectionSample,
}

/// One composited sample, kept for the backward sweep.
struct Contribution {
    hit: Hit,
    opacity: f64,
    opacity_active: bool,
    ceiling_active: bool,
    alpha: f64,
    color: [f64; 3],
    transmittance: f64,
}

fn prepare<'a>(scene: &'a Scene, camera: &Camera, config: &RenderConfig) -> Result<Prepared<'a>> {
    config.validate()?;
    camera.validate()?;
    scene.validate()?;
    let sh_limit = config.sh_degree_limit.unwrap_or(MAX_SH_DEGREE);
    let eye = camera.position();
    let mut views = Vec::with_capacity(scene.len());
    let mut view_dirs = Vec::with_capacity(scene.len());
    let mut sh_colors = Vec::with_capacity(scene.len());
    let mut rects = Vec::with_capacity(scene.len());
    for s in &scene.surfels {
        let view = SurfelView::new(camera, &s.geometry, config.uv_cutoff);
        let dir = s.geometry.center - eye;
        let dir = if dir.norm() > 0.0 { dir.normalize() } else { camera.optical_axis() };
        sh_colors.push(eval_sh_limited(&s.sh, &dir, sh_limit));
        view_dirs.push(dir);
        rects.push(view.screen_rect(camera));
        views.push(Some(view));
    }

    let ts = config.tile_size;
    let tiles_x = camera.width.div_ceil(ts);
    let tiles_y = camera.height.div_ceil(ts);
    let mut tiles: Vec<Tile> = (0..tiles_x * tiles_y)
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            Tile {
                x0: tx * ts,
                x1: ((tx + 1) * ts).min(camera.width),
                y0: ty * ts,
                y1: ((ty + 1) * ts).min(camera.height),
                surfels: Vec::new(),
            }
        })
        .collect();
    for (index, rect) in rects.iter().enumerate() {
        match rect {
            Some([x0, x1, y0, y1]) => {
                for ty in y0 / ts..(y1 - 1) / ts + 1 {
                    for tx in x0 / ts..(x1 - 1) / ts + 1 {
                        tiles[ty * tiles_x + tx].surfels.push(index);
                    }
                }
            }
            None => views[index] = None,
        }
    }
    Ok(Prepared {
        scene,
        views,
        view_dirs,
        sh_colors,
        sh_limit,
        tiles,
    })
}

impl Prepared<'_> {
    fn gather(&self, tile: &Tile, dir: &Vector3<f64>, hits: &mut Vec<Hit>) {
        hits.clear();
        for (local, &index) in tile.surfels.iter().enumerate() {
            if let Some(sample) = self.views[index].as_ref().and_then(|v| v.intersect(dir)) {
                hits.push(Hit { local, index, sample });
            }
        }
        hits.sort_by(|a, b| {
            a.sample
                .depth
                .total_cmp(&b.sample.depth)
                .then(a.index.cmp(&b.index))
        });
    }

    /// Front-to-back composite of one pixel. Calls `visit` for every
    /// composited sample and returns `(color, final transmittance)`.
    fn composite(
        &self,
        config: &RenderConfig,
        hits: &[Hit],
        mut visit: impl FnMut(Contribution),
    ) -> ([f64; 3], f64) {
        let mut color = [0.0; 3];
        let mut t = 1.0;
        for &hit in hits {
            let surfel = &self.scene.surfels[hit.index];
            let svf = surfel.appearance.eval(hit.sample.uv);
            let (opacity, opacity_active) = if config.allow_signed_alpha || svf.alpha >= 0.0 {
                (svf.alpha, true)
            } else {
                (0.0, false)
            };
            let raw = hit.sample.gaussian_weight * opacity;
            let ceiling_active = raw > config.alpha_ceiling;
            let alpha = if ceiling_active { config.alpha_ceiling } else { raw };
            if alpha.abs() < config.alpha_floor {
                continue;
            }
            let sh = self.sh_colors[hit.index];
            let c = [sh[0] + svf.rgb[0], sh[1] + svf.rgb[1], sh[2] + svf.rgb[2]];
            let w = t * alpha;
            for ch in 0..3 {
                color[ch] += w * c[ch];
            }
            visit(Contribution {
                hit,
                opacity,
                opacity_active,
                ceiling_active,
                alpha,
                color: c,
                transmittance: t,
            });
            t *= 1.0 - alpha;
            if t < config.transmittance_floor {
                break;
            }
        }
        for ch in 0..3 {
            color[ch] += t * config.background[ch];
        }
        (color, t)
    }
}

/// Render the scene from `camera`.
pub fn render(scene: &Scene, camera: &Camera, config: &RenderConfig) -> Result<RenderOutput> {
    let prep = prepare(scene, camera, config)?;
    let tile_pixels: Vec<Vec<([f64; 3], f64, u32)>> = prep
        .tiles
        .par_iter()
        .map(|tile| {
            let mut hits = Vec::new();
            let mut out = Vec::with_capacity((tile.x1 - tile.x0) * (tile.y1 - tile.y0));
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let dir = camera.ray_direction([x as f64 + 0.5, y as f64 + 0.5]);
                    prep.gather(tile, &dir, &mut hits);
                    let mut count = 0u32;
                    let (color, t) = prep.composite(config, &hits, |_| count += 1);
                    out.push((color, 1.0 - t, count));
                }
            }
            out
        })
        .collect();

    let (w, h) = (camera.width, camera.height);
    let mut color = Image::new(w, h, [0.0; 3]);
    let mut alpha_accum = vec![0.0; w * h];
    let mut contributor_count = vec![0; w * h];
    for (tile, pixels) in prep.tiles.iter().zip(tile_pixels) {
        let mut it = pixels.into_iter();
        for y in tile.y0..tile.y1 {
            for x in tile.x0..tile.x1 {
                let (c, a, n) = it.next().expect("tile pixel count");
                color.set(x, y, c);
                alpha_accum[y * w + x] = a;
                contributor_count[y * w + x] = n;
            }
        }
    }
    Ok(RenderOutput {
        color,
        alpha_accum,
        contributor_count,
    })
}

struct TileGrads {
    view: Vec<SurfelViewGrad>,
    sh_rgb: Vec<[f64; 3]>,
    appearance: Vec<f64>,
    touched: Vec<bool>,
}

/// Reverse-mode gradient of [`render`] for the pixel cotangent `d_color`.
pub fn render_backward(
    scene: &Scene,
    camera: &Camera,
    config: &RenderConfig,
    d_color: &Image,
) -> Result<GradientBuffer> {
    if d_color.width() != camera.width || d_color.height() != camera.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", camera.width, camera.height),
            actual: format!("{}x{}", d_color.width(), d_color.height()),
        });
    }
    let prep = prepare(scene, camera, config)?;
    let app_len = scene.surfels.first().map_or(0, |s| s.appearance.param_len());

    let staged: Vec<TileGrads> = prep
        .tiles
        .par_iter()
        .map(|tile| {
            let n = tile.surfels.len();
            let mut g = TileGrads {
                view: vec![SurfelViewGrad::default(); n],
                sh_rgb: vec![[0.0; 3]; n],
                appearance: vec![0.0; n * app_len],
                touched: vec![false; n],
            };
            if n == 0 {
                return g;
            }
            let mut hits = Vec::new();
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let d_pix = d_color.get(x, y);
                    if d_pix == [0.0; 3] {
                        continue;
                    }
                    let dir = camera.ray_direction([x as f64 + 0.5, y as f64 + 0.5]);
                    prep.gather(tile, &dir, &mut hits);
                    contribs.clear();
                    let (_, t_final) = prep.composite(config, &hits, |c| contribs.push(c));
                    let mut suffix = config.background.map(|b| b * t_final);
                    for c in contribs.iter().rev() {
                        let local = c.hit.local;
                        let w = c.transmittance * c.alpha;
                        let d_rgb = d_pix.map(|d| d * w);
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            d_alpha += d_pix[ch]
                                * (c.transmittance * c.color[ch] - suffix[ch] / (1.0 - c.alpha));
                            suffix[ch] += w * c.color[ch];
                        }
                        g.touched[local] = true;
                        for ch in 0..3 {
                            g.sh_rgb[local][ch] += d_rgb[ch];
                        }
                        let d_raw = if c.ceiling_active { 0.0 } else { d_alpha };
                        let d_weight = d_raw * c.opacity;
                        let d_opacity = if c.opacity_active {
                            d_raw * c.hit.sample.gaussian_weight
                        } else {
                            0.0
                        };
                        let surfel = &prep.scene.surfels[c.hit.index];
                        let slot = &mut g.appearance[local * app_len..(local + 1) * app_len];
                        let d_uv = surfel.appearance.vjp(c.hit.sample.uv, d_rgb, d_opacity, slot);
                        prep.views[c.hit.index]
                            .as_ref()
                            .expect("binned surfel has a view")
                            .accumulate_vjp(&dir, &c.hit.sample, d_uv, d_weight, &mut g.view[local]);
                    }
                }
            }
            g
        })
        .collect();

    let n = scene.len();
    let mut view_grads = vec![SurfelViewGrad::default(); n];
    let mut sh_rgb = vec![[0.0; 3]; n];
    let mut app_grads = vec![0.0; n * app_len];
    let mut visible = vec![false; n];
    for (tile, g) in prep.tiles.iter().zip(&staged) {
        for (local, &index) in tile.surfels.iter().enumerate() {
            if !g.touched[local] {
                continue;
            }
            visible[index] = true;
            view_grads[index].add(&g.view[local]);
            for ch in 0..3 {
                sh_rgb[index][ch] += g.sh_rgb[local][ch];
            }
            let src = &g.appearance[local * app_len..(local + 1) * app_len];
            for (dst, s) in app_grads[index * app_len..(index + 1) * app_len].iter_mut().zip(src) {
                *dst += s;
            }
        }
    }

    let eye = camera.position();
    let mut buffer = GradientBuffer::zeros_like(scene);
    for index in 0..n {
        if !visible[index] {
            continue;
        }
        let surfel = &scene.surfels[index];
        let view = prep.views[index].as_ref().expect("visible surfel has a view");
        let geom = view.finish_vjp(camera, &surfel.geometry, &view_grads[index]);

        let mut flat = vec![0.0; surfel.param_len()];
        let sh_len = surfel.sh.scalar_count();
        let dir = prep.view_dirs[index];
        let d_dir = eval_sh_vjp(
            &surfel.sh,
            &dir,
            prep.sh_limit,
            sh_rgb[index],
            &mut flat[GEOMETRY_PARAMS..GEOMETRY_PARAMS + sh_len],
        );
        let offset = surfel.geometry.center - eye;
        let d_center_sh = if offset.norm() > 0.0 {
            (d_dir - dir * dir.dot(&d_dir)) / offset.norm()
        } else {
            Vector3::zeros()
        };
        let d_center = geom.center + d_center_sh;
        flat[0..3].copy_from_slice(d_center.as_slice());
        flat[3..7].copy_from_slice(&geom.rotation);
        flat[7..9].copy_from_slice(&geom.log_scale);
        flat[surfel.appearance_offset()..]
            .copy_from_slice(&app_grads[index * app_len..(index + 1) * app_len]);
        buffer.surfels[index].read_flat(&flat);

        let depth = view.center_cam.z;
        let g_cam = view_grads[index].center_cam;
        let ndc = [
            g_cam.x * depth / camera.fx * camera.width as f64 / 2.0,
            g_cam.y * depth / camera.fy * camera.height as f64 / 2.0,
        ];
        buffer.screen_grad[index] = (ndc[0] * ndc[0] + ndc[1] * ndc[1]).sqrt();
        buffer.visible[index] = true;
    }
    Ok(buffer)
}

/// Discrete structure of one pixel's composite: the depth-ordered surfel
/// indices hit by the ray, and for every composited sample its index plus
/// whether the opacity clamp at zero and the alpha ceiling were active.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelStructure {
    pub hits: Vec<usize>,
    pub composited: Vec<(usize, bool, bool)>,
}

/// Per-pixel composite structure, row-major. The rendered image is a smooth
/// function of the parameters on any set where this stays constant, so
/// finite-difference checks compare it before and after each perturbation.
pub fn composite_structure(scene: &Scene, camera: &Camera, config: &RenderConfig) -> Result<Vec<PixelStructure>> {
    let prep = prepare(scene, camera, config)?;
    let mut out = vec![
        PixelStructure {
            hits: Vec::new(),
            composited: Vec::new()
        };
        camera.width * camera.height
    ];
    let mut hits = Vec::new();
    for tile in &prep.tiles {
        for y in tile.y0..tile.y1 {
            for x in tile.x0..tile.x1 {
                let dir = camera.ray_direction([x as f64 + 0.5, y as f64 + 0.5]);
                prep.gather(tile, &dir, &mut hits);
                let px = &mut out[y * camera.width + x];
                px.hits = hits.iter().map(|h| h.index).collect();
                prep.composite(config, &hits, |c| {
                    px.composited.push((c.hit.index, c.opacity_active, c.ceiling_active))
                });
            }
        }
    }
    Ok(out)
}
