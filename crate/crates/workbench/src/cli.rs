//! Command-line interface. [`run`] returns the process exit code: 0 on
//! success, 1 on runtime failure, 2 on usage errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use supersplat::appearance::sh::MAX_SH_DEGREE;
use supersplat::appearance::VariantTag;
use supersplat::gradcheck::{check_intersection, check_loss, check_renderer, check_svf, CheckReport};
use supersplat::metrics::evaluate;
use supersplat::training::{fit, kernel_inside_fraction, LogRecord, TrainConfig};
use supersplat::{render, RenderConfig, Scene, VariantSpec};

use crate::dataset::{load_dataset, write_png, PoseFile};
use crate::report::{read_json, to_json_string, write_json, write_json_lines};
use crate::scene_file::{load_scene, save_scene};
use crate::synthetic::{make_synthetic, SyntheticKind, SyntheticParams};
use crate::{Result, WorkbenchError};

#[derive(Debug, Parser)]
#[command(name = "supersplat", version, about = "Fit, render and evaluate Gaussian surfel scenes")]
pub struct Cli {
    /// Print a machine-readable JSON report on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a scene on a dataset.
    Fit(FitArgs),
    /// Render a scene from a dataset camera or a pose file.
    Render(RenderArgs),
    /// Compare renders of a scene with a dataset's images.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Print the per-Gaussian parameter count of a variant.
    Params(ParamsArgs),
    /// Write a synthetic dataset.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct VariantArgs {
    /// constant, bilinear, mk, mk-sigmoid, mk8 or mlp.
    #[arg(long, default_value = "mk")]
    pub variant: VariantSpec,
    /// Kernel count override for movable-kernel variants.
    #[arg(long)]
    pub k: Option<usize>,
    /// Hidden width override for the MLP variant.
    #[arg(long)]
    pub hidden: Option<usize>,
}

impl VariantArgs {
    pub fn spec(&self) -> Result<VariantSpec> {
        let mut spec = self.variant;
        match (spec.tag, self.k, self.hidden) {
            (VariantTag::MovableKernels, Some(k), None) => spec.kernels = k,
            (VariantTag::TinyMlp, None, Some(h)) => spec.hidden = h,
            (_, None, None) => {}
            _ => {
                return Err(WorkbenchError::Usage(format!(
                    "--k applies only to movable kernels and --hidden only to mlp (variant {spec})"
                )))
            }
        }
        spec.validate().map_err(|e| WorkbenchError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long)]
    pub max_gaussians: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics log path (line-delimited JSON); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Dataset manifest supplying the camera (with --camera) and background.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data", conflicts_with = "pose")]
    pub camera: Option<usize>,
    /// JSON file with one camera: intrinsics plus "transform".
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Encode the PNG with the sRGB transfer curve.
    #[arg(long)]
    pub srgb: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "mk")]
    pub variant: VariantSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random cases per function-level suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Also check the full renderer on a random three-surfel scene.
    #[arg(long)]
    pub full_renderer: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub variant: VariantArgs,
    #[arg(long, default_value_t = MAX_SH_DEGREE)]
    pub sh_degree: u8,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// disc4, textured_quad or checker_sphere.
    #[arg(long)]
    pub kind: SyntheticKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image width and height.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub init_points: Option<usize>,
}

/// Parse arguments and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(WorkbenchError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn emit<T: Serialize>(json: bool, report: &T, human: impl FnOnce()) {
    if json {
        println!("{}", to_json_string(report));
    } else {
        human();
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.json),
        Command::Render(a) => cmd_render(a, cli.json),
        Command::Eval(a) => cmd_eval(a, cli.json),
        Command::Gradcheck(a) => cmd_gradcheck(a, cli.json),
        Command::Params(a) => cmd_params(a, cli.json),
        Command::MakeSynthetic(a) => cmd_synthetic(a, cli.json),
    }
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub variant: String,
    pub iterations: usize,
    pub seed: u64,
    pub gaussian_count: usize,
    pub final_loss: f64,
    pub final_psnr: f64,
    pub kernel_inside_percent: Option<f64>,
    pub scene: String,
    pub log: String,
}

pub fn default_log_path(scene: &Path) -> PathBuf {
    let mut name = scene.file_stem().unwrap_or_default().to_os_string();
    name.push(".log.jsonl");
    scene.with_file_name(name)
}

fn cmd_fit(a: &FitArgs, json: bool) -> Result<i32> {
    let mut config: TrainConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    config.variant = a.variant.spec()?;
    if let Some(n) = a.iters {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if a.max_gaussians.is_some() {
        config.max_gaussians = a.max_gaussians;
    }
    config.validate().map_err(|e| WorkbenchError::Usage(e.to_string()))?;
    let loaded = load_dataset(&a.data)?;
    let result = fit(&loaded.dataset, &config)?;
    save_scene(&a.out, &result.scene)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    write_json_lines(&log_path, &result.log)?;
    let last: &LogRecord = result.log.last().expect("fit always logs the final state");
    let report = FitReport {
        variant: config.variant.to_string(),
        iterations: config.iterations,
        seed: config.seed,
        gaussian_count: result.scene.len(),
        final_loss: last.loss,
        final_psnr: last.psnr,
        kernel_inside_percent: kernel_inside_fraction(&result.scene, config.render.uv_cutoff).ok(),
        scene: a.out.display().to_string(),
        log: log_path.display().to_string(),
    };
    emit(json, &report, || {
        println!(
            "{}: {} gaussians, loss {:.6}, PSNR {:.3} dB -> {}",
            report.variant, report.gaussian_count, report.final_loss, report.final_psnr, report.scene
        )
    });
    Ok(0)
}

fn cmd_render(a: &RenderArgs, json: bool) -> Result<i32> {
    let scene = load_scene(&a.scene)?;
    let (camera, background) = match (&a.data, a.camera, &a.pose) {
        (Some(data), Some(idx), None) => {
            let loaded = load_dataset(data)?;
            let n = loaded.dataset.views.len();
            let view = loaded
                .dataset
                .views
                .get(idx)
                .ok_or_else(|| WorkbenchError::Usage(format!("camera index {idx} out of range (dataset has {n})")))?;
            (view.camera.clone(), loaded.dataset.background)
        }
        (_, None, Some(pose)) => PoseFile::load(pose)?,
        _ => return Err(WorkbenchError::Usage("render needs either --data with --camera, or --pose".into())),
    };
    let out = render(&scene, &camera, &RenderConfig::with_background(background))?;
    write_png(&a.out, &out.color, a.srgb)?;
    #[derive(Serialize)]
    struct R {
        image: String,
        width: usize,
        height: usize,
        gaussian_count: usize,
    }
    let r = R {
        image: a.out.display().to_string(),
        width: camera.width,
        height: camera.height,
        gaussian_count: scene.len(),
    };
    emit(json, &r, || println!("wrote {} ({}x{})", r.image, r.width, r.height));
    Ok(0)
}

#[derive(Debug, Serialize)]
pub struct ViewMetrics {
    pub file: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub gaussian_count: usize,
}

pub fn evaluate_scene(scene: &Scene, data: &Path) -> Result<EvalReport> {
    let loaded = load_dataset(data)?;
    let config = RenderConfig::with_background(loaded.dataset.background);
    let mut views = Vec::new();
    for (frame, view) in loaded.manifest.frames.iter().zip(&loaded.dataset.views) {
        let out = render(scene, &view.camera, &config)?;
        let m = evaluate(&out.color, &view.image)?;
        views.push(ViewMetrics {
            file: frame.file.clone(),
            psnr: m.psnr,
            ssim: m.ssim,
        });
    }
    let n = views.len() as f64;
    Ok(EvalReport {
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        views,
        gaussian_count: scene.len(),
    })
}

fn cmd_eval(a: &EvalArgs, json: bool) -> Result<i32> {
    let scene = load_scene(&a.scene)?;
    let report = evaluate_scene(&scene, &a.data)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    emit(json, &report, || {
        for v in &report.views {
            println!("{}: PSNR {:.3} dB, SSIM {:.4}", v.file, v.psnr, v.ssim);
        }
        println!("mean: PSNR {:.3} dB, SSIM {:.4}", report.mean_psnr, report.mean_ssim);
    });
    Ok(0)
}

#[derive(Debug, Serialize)]
pub struct GradcheckReport {
    pub suites: Vec<CheckReport>,
    pub passed: bool,
}

pub fn run_gradcheck(variant: &VariantSpec, seed: u64, cases: usize, full_renderer: bool) -> Result<GradcheckReport> {
    let mut suites = vec![
        check_intersection(cases.min(100).max(1), seed)?,
        check_svf(variant, cases, seed)?,
        check_loss(10, seed)?,
    ];
    if full_renderer {
        suites.push(check_renderer(variant, seed)?);
    }
    let passed = suites.iter().all(|s| s.passed);
    Ok(GradcheckReport { suites, passed })
}

fn cmd_gradcheck(a: &GradcheckArgs, json: bool) -> Result<i32> {
    a.variant.validate().map_err(|e| WorkbenchError::Usage(e.to_string()))?;
    let report = run_gradcheck(&a.variant, a.seed, a.cases, a.full_renderer)?;
    emit(json, &report, || {
        for s in &report.suites {
            println!(
                "{:<24} {:>4} cases {:>6} scalars  max rel err {:.3e} (tol {:.0e})  {}",
                s.name,
                s.cases,
                s.scalars,
                s.max_rel_error,
                s.tolerance,
                if s.passed { "ok" } else { "FAILED" }
            );
        }
    });
    Ok(if report.passed { 0 } else { 1 })
}

#[derive(Debug, Serialize)]
pub struct ParamsReport {
    pub variant: String,
    pub params: usize,
    pub constant_params: usize,
    pub ratio: f64,
}

pub fn params_report(spec: &VariantSpec, sh_degree: u8) -> Result<ParamsReport> {
    let params = spec.param_count(sh_degree)?;
    let constant_params = VariantSpec::constant().param_count(sh_degree)?;
    Ok(ParamsReport {
        variant: spec.to_string(),
        params,
        constant_params,
        ratio: params as f64 / constant_params as f64,
    })
}

fn cmd_params(a: &ParamsArgs, json: bool) -> Result<i32> {
    let spec = a.variant.spec()?;
    let report = params_report(&spec, a.sh_degree).map_err(|e| WorkbenchError::Usage(e.to_string()))?;
    emit(json, &report, || {
        println!("{}: {} parameters per Gaussian", report.variant, report.params);
        println!("ratio vs constant ({}): {:.2}", report.constant_params, report.ratio);
    });
    Ok(0)
}

fn cmd_synthetic(a: &SyntheticArgs, json: bool) -> Result<i32> {
    let mut params = SyntheticParams::default_for(a.kind);
    if let Some(s) = a.size {
        params.size = s;
    }
    if let Some(v) = a.views {
        params.views = v;
    }
    if let Some(n) = a.init_points {
        params.init_points = n;
    }
    if params.size == 0 || params.views == 0 {
        return Err(WorkbenchError::Usage("--size and --views must be positive".into()));
    }
    let manifest = make_synthetic(a.kind, &params, a.seed, &a.out)?;
    #[derive(Serialize)]
    struct R {
        manifest: String,
        views: usize,
        size: usize,
    }
    let r = R {
        manifest: manifest.display().to_string(),
        views: params.views,
        size: params.size,
    };
    emit(json, &r, || println!("wrote {}", r.manifest));
    Ok(0)
}
