//! Optimization: photometric loss, Adam, adaptive density control and the
//! training loop.

pub mod adam;
pub mod densify;
pub mod init;
pub mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, GroupRates, LearningRates};
pub use densify::{densify, kernel_inside_fraction, reset_opacity, DensifyOutcome, DensifyParams, DensifyStats};
pub use init::{camera_extent, initialize_scene, random_points, InitPoint};
pub use loss::photometric_loss;

use crate::appearance::sh::MAX_SH_DEGREE;
use crate::appearance::{KernelForm, ParamGroup, VariantSpec};
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::image::Image;
use crate::metrics::psnr;
use crate::renderer::{render, render_backward, RenderConfig};
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingView {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub views: Vec<TrainingView>,
    pub background: [f64; 3],
    pub init_points: Vec<InitPoint>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if v.image.width() != v.camera.width || v.image.height() != v.camera.height {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{} image for view {i}", v.camera.width, v.camera.height),
                    actual: format!("{}x{}", v.image.width(), v.image.height()),
                });
            }
        }
        Ok(())
    }

    pub fn cameras(&self) -> Vec<&Camera> {
        self.views.iter().map(|v| &v.camera).collect()
    }

    pub fn extent(&self) -> f64 {
        camera_extent(&self.cameras())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: VariantSpec,
    pub iterations: usize,
    pub seed: u64,
    pub sh_degree: u8,
    /// Iterations between unlocking successive SH bands; `None` trains all
    /// bands from the start.
    pub sh_degree_interval: Option<usize>,
    pub loss_ssim_weight: f64,
    pub learning_rates: LearningRates,
    pub init_opacity: f64,
    /// Number of random seed points when the dataset provides none.
    pub random_init_points: usize,
    pub densify_from: usize,
    pub densify_interval: usize,
    /// Densification stops here; `None` means half the iterations.
    pub densify_until: Option<usize>,
    pub grad_split_threshold: f64,
    /// Clone/split size boundary as a fraction of the scene extent.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_gaussians: Option<usize>,
    pub split_children: usize,
    pub split_scale_divisor: f64,
    pub opacity_reset_interval: usize,
    pub opacity_reset_value: f64,
    /// Iterations between log records (a record is always written for
    /// iteration 0 and for the final state).
    pub eval_interval: usize,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: VariantSpec::movable_kernels(4, KernelForm::Exponential),
            iterations: 2000,
            seed: 0,
            sh_degree: MAX_SH_DEGREE,
            sh_degree_interval: Some(1000),
            loss_ssim_weight: 0.2,
            learning_rates: LearningRates::default(),
            init_opacity: 0.1,
            random_init_points: 100,
            densify_from: 100,
            densify_interval: 100,
            densify_until: None,
            grad_split_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_gaussians: None,
            split_children: 2,
            split_scale_divisor: 1.6,
            opacity_reset_interval: 3000,
            opacity_reset_value: 0.01,
            eval_interval: 100,
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        self.render.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.loss_ssim_weight > 0.0 && self.loss_ssim_weight < 1.0) {
            return bad("loss_ssim_weight must lie strictly between 0 and 1");
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return bad("sh_degree must be at most 3");
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad("init_opacity must lie strictly between 0 and 1");
        }
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 || self.eval_interval == 0 {
            return bad("intervals must be positive");
        }
        if self.sh_degree_interval == Some(0) {
            return bad("sh_degree_interval must be positive");
        }
        if !(self.grad_split_threshold > 0.0) || !(self.percent_dense > 0.0) || !(self.prune_opacity >= 0.0) {
            return bad("densification thresholds must be positive");
        }
        if self.split_children < 2 || !(self.split_scale_divisor > 1.0) {
            return bad("splitting needs at least two children and a divisor above one");
        }
        if self.max_gaussians == Some(0) {
            return bad("max_gaussians must be positive");
        }
        Ok(())
    }

    pub fn densify_until(&self) -> usize {
        self.densify_until.unwrap_or(self.iterations / 2)
    }

    /// SH band used at `iteration`.
    pub fn active_sh_degree(&self, iteration: usize) -> u8 {
        match self.sh_degree_interval {
            Some(step) => (iteration / step).min(self.sh_degree as usize) as u8,
            None => self.sh_degree,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    /// Mean photometric loss over all training views.
    pub loss: f64,
    /// Mean PSNR over all training views.
    pub psnr: f64,
    pub gaussian_count: usize,
    /// Wall-clock time since the start of training; the only
    /// non-deterministic field.
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub scene: Scene,
    pub log: Vec<LogRecord>,
}

/// Mean loss and PSNR of `scene` over every view of `dataset`.
pub fn evaluate_dataset(scene: &Scene, dataset: &Dataset, config: &TrainConfig) -> Result<(f64, f64)> {
    let render_config = RenderConfig {
        background: dataset.background,
        sh_degree_limit: None,
        ..config.render.clone()
    };
    let mut loss = 0.0;
    let mut quality = 0.0;
    for view in &dataset.views {
        let out = render(scene, &view.camera, &render_config)?;
        loss += photometric_loss(&out.color, &view.image, config.loss_ssim_weight)?.0;
        quality += psnr(&out.color, &view.image)?;
    }
    let n = dataset.views.len() as f64;
    Ok((loss / n, quality / n))
}

/// Epoch-wise shuffled view order.
struct ViewSampler {
    order: Vec<usize>,
    next: usize,
}

impl ViewSampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            next: n,
        }
    }

    fn sample(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

/// Optimize a scene for `dataset`. Starts from the dataset's seed points, or
/// from random points when it has none.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    dataset.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points = if dataset.init_points.is_empty() {
        random_points(&dataset.cameras(), config.random_init_points, &mut rng)
    } else {
        dataset.init_points.clone()
    };
    let scene = initialize_scene(&points, &config.variant, config.sh_degree, config.init_opacity, &mut rng);
    fit_scene(scene, dataset, config, &mut rng)
}

/// Optimize a given starting scene.
pub fn fit_scene(mut scene: Scene, dataset: &Dataset, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<FitResult> {
    dataset.validate()?;
    config.validate()?;
    scene.validate()?;
    if let Some(cap) = config.max_gaussians {
        scene.surfels.truncate(cap);
    }
    let start = Instant::now();
    let extent = dataset.extent();
    let densify_until = config.densify_until();
    let densify_params = DensifyParams {
        grad_threshold: config.grad_split_threshold,
        clone_scale: config.percent_dense * extent,
        prune_opacity: config.prune_opacity,
        max_gaussians: config.max_gaussians,
        split_children: config.split_children,
        split_scale_divisor: config.split_scale_divisor,
    };

    let mut adam = AdamState::new(&scene);
    let mut stats = DensifyStats::new(scene.len());
    let mut sampler = ViewSampler::new(dataset.views.len());
    let mut log = Vec::new();
    let record = |it: usize, scene: &Scene, log: &mut Vec<LogRecord>| -> Result<()> {
        let (loss, quality) = evaluate_dataset(scene, dataset, config)?;
        log.push(LogRecord {
            iteration: it,
            loss,
            psnr: quality,
            gaussian_count: scene.len(),
            wall_ms: start.elapsed().as_millis() as u64,
        });
        Ok(())
    };

    for it in 0..config.iterations {
        if it % config.eval_interval == 0 {
            record(it, &scene, &mut log)?;
        }
        let view = &dataset.views[sampler.sample(rng)];
        let render_config = RenderConfig {
            background: dataset.background,
            sh_degree_limit: Some(config.active_sh_degree(it)),
            ..config.render.clone()
        };
        let out = render(&scene, &view.camera, &render_config)?;
        let (_, d_color) = photometric_loss(&out.color, &view.image, config.loss_ssim_weight)?;
        let grads = render_backward(&scene, &view.camera, &render_config, &d_color)?;
        if it < densify_until {
            stats.accumulate(&grads);
        }
        let rates = config.learning_rates.at(it, config.iterations, extent);
        adam_step(&mut scene, &grads, &mut adam, &rates)?;

        let step = it + 1;
        if step < densify_until {
            if step >= config.densify_from && step % config.densify_interval == 0 {
                let outcome = densify(&mut scene, &stats, &densify_params, rng);
                adam.remap(&outcome.origin, &scene);
                stats = DensifyStats::new(scene.len());
            }
            if step % config.opacity_reset_interval == 0 {
                reset_opacity(&mut scene, config.opacity_reset_value);
                for group in [ParamGroup::Opacity, ParamGroup::VariantOpacity, ParamGroup::Mlp] {
                    adam.reset_group(&scene, group);
                }
            }
        }
    }
    record(config.iterations, &scene, &mut log)?;
    Ok(FitResult { scene, log })
}
