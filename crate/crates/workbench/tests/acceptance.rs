//! Acceptance suite: one pass/fail line per criterion. Exits non-zero if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supersplat::appearance::{Appearance, BilinearParams, KernelForm, MovableKernelParams, ShCoefficients, VariantSpec};
use supersplat::gradcheck::{check_intersection, check_loss, check_renderer, check_svf, randomize_appearance};
use supersplat::training::{fit, kernel_inside_fraction, TrainConfig};
use supersplat::{render, Camera, RenderConfig, Scene, Surfel, SurfelGeometry};
use workbench::cli::params_report;
use workbench::dataset::load_dataset;
use workbench::scene_file::{decode_scene, encode_scene};
use workbench::synthetic::{make_synthetic, SyntheticKind, SyntheticParams};

// Criterion 1
const RATIO_PRINT_DIGITS: usize = 2;
// Criterion 2
const GRADCHECK_CASES: usize = 200;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
// Criterion 3
const EQUIVALENCE_TOL: f64 = 1e-10;
const EQUIVALENCE_SEEDS: u64 = 10;
const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(30);
// Criterion 4
const DISC_ITERS: usize = 2000;
const DISC_SEED: u64 = 0;
const DISC_MK_MARGIN_DB: f64 = 3.0;
const DISC_OTHER_MARGIN_DB: f64 = 1.0;
const DISC_BUDGET: Duration = Duration::from_secs(300);
// Criterion 5
const QUAD_CAP: usize = 500;
const QUAD_ITERS: usize = 2000;
const QUAD_SEEDS: [u64; 3] = [0, 1, 2];
const QUAD_MARGIN_DB: f64 = 0.5;
const QUAD_BUDGET: Duration = Duration::from_secs(1200);
// Criterion 6
const INSIDE_PERCENT: f64 = 95.0;
// Criterion 8
const PROPERTY_INSTANCES: usize = 50;
const RIGID_TOL: f64 = 1e-9;
const PROPERTY_BUDGET: Duration = Duration::from_secs(120);

struct Outcome {
    passed: bool,
    detail: String,
}

fn line(n: usize, name: &str, o: &Outcome, elapsed: Duration) {
    println!(
        "criterion {n} [{}] {name}: {} ({:.1} s)",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
}

fn criterion_1() -> Outcome {
    let cases: [(&str, usize, Option<&str>); 6] = [
        ("constant", 58, None),
        ("mk", 81, Some("1.40")),
        ("mk8", 105, None),
        ("mk-sigmoid", 81, Some("1.40")),
        ("bilinear", 74, Some("1.28")),
        ("mlp", 109, Some("1.88")),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, count, ratio) in cases {
        let spec: VariantSpec = name.parse().unwrap();
        let r = params_report(&spec, 3).unwrap();
        let printed = format!("{:.*}", RATIO_PRINT_DIGITS, r.ratio);
        ok &= r.params == count && ratio.is_none_or(|p| printed == p);
        parts.push(format!("{name}={} ({printed}x)", r.params));
    }
    Outcome {
        passed: ok,
        detail: parts.join(", "),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let variants = ["constant", "bilinear", "mk", "mk-sigmoid", "mk8", "mlp"];
    let mut ok = true;
    let mut worst_fn: f64 = 0.0;
    let mut worst_renderer: f64 = 0.0;
    let mut cases = 0;
    for (i, name) in variants.iter().enumerate() {
        let spec: VariantSpec = name.parse().unwrap();
        let svf = check_svf(&spec, GRADCHECK_CASES, 100 + i as u64).unwrap();
        let full = check_renderer(&spec, 200 + i as u64).unwrap();
        ok &= svf.passed && svf.cases >= GRADCHECK_CASES && full.passed;
        worst_fn = worst_fn.max(svf.max_rel_error);
        worst_renderer = worst_renderer.max(full.max_rel_error);
        cases += svf.cases;
    }
    let isect = check_intersection(GRADCHECK_CASES, 300).unwrap();
    let loss = check_loss(20, 301).unwrap();
    ok &= isect.passed && loss.passed;
    worst_fn = worst_fn.max(isect.max_rel_error).max(loss.max_rel_error);
    let elapsed = start.elapsed();
    ok &= elapsed < GRADCHECK_BUDGET;
    Outcome {
        passed: ok,
        detail: format!(
            "{cases} SVF cases + intersection/loss: max rel err {worst_fn:.2e} (tol 1e-5); 3-surfel 8x8 renderer: {worst_renderer:.2e} (tol 1e-4)"
        ),
    }
}

fn random_scene(rng: &mut ChaCha8Rng, spec: &VariantSpec, n: usize, tilt: f64) -> Scene {
    let surfels = (0..n)
        .map(|_| {
            let z = rng.gen_range(2.0..6.0);
            let axis = nalgebra::Unit::new_normalize(Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0));
            let mut sh = ShCoefficients::from_rgb(3, [0, 1, 2].map(|_| rng.gen_range(0.0..1.0)));
            for c in sh.coeffs_mut()[1..].iter_mut().flatten() {
                *c = rng.gen_range(-0.2..0.2);
            }
            let mut appearance = Appearance::initial(spec, 0.5, rng);
            randomize_appearance(&mut appearance, rng);
            Surfel {
                geometry: SurfelGeometry::new(
                    Vector3::new(rng.gen_range(-0.5..0.5) * z, rng.gen_range(-0.5..0.5) * z, z),
                    UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-tilt..=tilt)),
                    [rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6)],
                ),
                sh,
                appearance,
            }
        })
        .collect();
    Scene::new(surfels)
}

fn test_camera() -> Camera {
    Camera::new(48, 40, 40.0, 40.0, 24.0, 20.0, Isometry3::identity()).unwrap()
}

fn max_diff(a: &supersplat::Image, b: &supersplat::Image) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).abs()))
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..EQUIVALENCE_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_scene(&mut rng, &VariantSpec::constant(), 30, 1.0);
        let swap = |f: &dyn Fn(f64, &mut ChaCha8Rng) -> Appearance, rng: &mut ChaCha8Rng| {
            let mut s = base.clone();
            for surfel in &mut s.surfels {
                let Appearance::Constant { opacity } = surfel.appearance else { unreachable!() };
                surfel.appearance = f(supersplat::appearance::sigmoid(opacity), rng);
            }
            s
        };
        let mk = swap(
            &|a, rng| {
                let mut k = MovableKernelParams::initial(4, KernelForm::Exponential, a);
                k.lambda_e = 0.0;
                for c in &mut k.centers {
                    *c = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                }
                Appearance::MovableKernels(k)
            },
            &mut rng,
        );
        let bi = swap(
            &|a, rng| {
                let mut b = BilinearParams::uniform([0.0; 3], a);
                b.lambda_s = rng.gen_range(0.5..10.0);
                Appearance::Bilinear(b)
            },
            &mut rng,
        );
        let config = RenderConfig::with_background([0.2, 0.3, 0.4]);
        let reference = render(&base, &test_camera(), &config).unwrap().color;
        for scene in [mk, bi] {
            let out = render(&scene, &test_camera(), &config).unwrap().color;
            worst = worst.max(max_diff(&reference, &out));
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        passed: worst <= EQUIVALENCE_TOL && elapsed < EQUIVALENCE_BUDGET,
        detail: format!("{EQUIVALENCE_SEEDS} seeds, max pixel difference {worst:.2e} (tol {EQUIVALENCE_TOL:.0e})"),
    }
}

fn fit_config(variant: &str, iters: usize, seed: u64, cap: usize) -> TrainConfig {
    TrainConfig {
        variant: variant.parse().unwrap(),
        iterations: iters,
        seed,
        max_gaussians: Some(cap),
        ..TrainConfig::default()
    }
}

fn criterion_4(dir: &Path) -> Outcome {
    let start = Instant::now();
    let kind = SyntheticKind::Disc4;
    let manifest = make_synthetic(kind, &SyntheticParams::default_for(kind), DISC_SEED, &dir.join("disc4")).unwrap();
    let data = load_dataset(&manifest).unwrap().dataset;
    let psnr = |v: &str| {
        let r = fit(&data, &fit_config(v, DISC_ITERS, DISC_SEED, 1)).unwrap();
        assert_eq!(r.scene.len(), 1);
        r.log.last().unwrap().psnr
    };
    let c = psnr("constant");
    let b = psnr("bilinear");
    let m = psnr("mk");
    let n = psnr("mlp");
    let elapsed = start.elapsed();
    Outcome {
        passed: m >= c + DISC_MK_MARGIN_DB && b >= c + DISC_OTHER_MARGIN_DB && n >= c + DISC_OTHER_MARGIN_DB && elapsed < DISC_BUDGET,
        detail: format!(
            "PSNR constant {c:.2}, bilinear {b:.2} ({:+.2}), mk {m:.2} ({:+.2}), mlp {n:.2} ({:+.2}) dB",
            b - c,
            m - c,
            n - c
        ),
    }
}

fn criteria_5_and_6(dir: &Path) -> (Outcome, Outcome) {
    let start = Instant::now();
    let kind = SyntheticKind::TexturedQuad;
    let manifest = make_synthetic(kind, &SyntheticParams::default_for(kind), 0, &dir.join("quad")).unwrap();
    let data = load_dataset(&manifest).unwrap().dataset;
    let mut sums = [0.0; 2];
    let mut inside = Vec::new();
    let mut max_count = 0;
    for &seed in &QUAD_SEEDS {
        for (i, v) in ["constant", "mk"].iter().enumerate() {
            let r = fit(&data, &fit_config(v, QUAD_ITERS, seed, QUAD_CAP)).unwrap();
            max_count = max_count.max(r.log.iter().map(|l| l.gaussian_count).max().unwrap());
            sums[i] += r.log.last().unwrap().psnr;
            if *v == "mk" {
                inside.push(kernel_inside_fraction(&r.scene, RenderConfig::default().uv_cutoff).unwrap());
            }
        }
    }
    let n = QUAD_SEEDS.len() as f64;
    let (c, m) = (sums[0] / n, sums[1] / n);
    let elapsed = start.elapsed();
    let five = Outcome {
        passed: m >= c + QUAD_MARGIN_DB && max_count <= QUAD_CAP && elapsed < QUAD_BUDGET,
        detail: format!("mean PSNR over {} seeds: constant {c:.2}, mk {m:.2} ({:+.2}) dB; peak count {max_count}", QUAD_SEEDS.len(), m - c),
    };
    let min_inside = inside.iter().copied().fold(f64::INFINITY, f64::min);
    let six = Outcome {
        passed: min_inside >= INSIDE_PERCENT,
        detail: format!(
            "kernels inside the footprint per seed: {}",
            inside.iter().map(|p| format!("{p:.2}%")).collect::<Vec<_>>().join(", ")
        ),
    };
    (five, six)
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_supersplat"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Artifacts of one full CLI pipeline: synthetic data, fit, render, eval.
fn pipeline(dir: &Path) -> Option<Vec<(String, Vec<u8>)>> {
    let d = |p: &str| dir.join(p).display().to_string();
    let ok = run_cli(&["make-synthetic", "--kind", "disc4", "--out", &d("data"), "--seed", "3"])
        && run_cli(&[
            "fit", "--data", &d("data/transforms.json"), "--variant", "mk", "--max-gaussians", "1", "--iters", "2000",
            "--seed", "3", "--out", &d("scene.sgs"),
        ])
        && run_cli(&["render", "--scene", &d("scene.sgs"), "--data", &d("data/transforms.json"), "--camera", "0", "--out", &d("render.png")])
        && run_cli(&["eval", "--scene", &d("scene.sgs"), "--data", &d("data/transforms.json"), "--out", &d("report.json")]);
    if !ok {
        return None;
    }
    let mut files = Vec::new();
    for name in ["data/transforms.json", "data/view_000.png", "scene.sgs", "render.png", "report.json"] {
        files.push((name.to_string(), std::fs::read(dir.join(name)).ok()?));
    }
    // The metrics log carries wall-clock time; everything else must match.
    let log = std::fs::read_to_string(dir.join("scene.log.jsonl")).ok()?;
    let stripped: String = log
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            workbench::report::to_json_string(&v) + "\n"
        })
        .collect();
    files.push(("scene.log.jsonl (without wall_ms)".into(), stripped.into_bytes()));
    Some(files)
}

fn criterion_7(dir: &Path) -> Outcome {
    let a = pipeline(&dir.join("run_a"));
    let b = pipeline(&dir.join("run_b"));
    match (a, b) {
        (Some(a), Some(b)) => {
            let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            Outcome {
                passed: differing.is_empty(),
                detail: if differing.is_empty() {
                    format!("{} artifacts byte-identical across two runs", a.len())
                } else {
                    format!("differing: {}", differing.join(", "))
                },
            }
        }
        _ => Outcome {
            passed: false,
            detail: "CLI pipeline failed".into(),
        },
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let variants = ["constant", "bilinear", "mk", "mk-sigmoid", "mk8", "mlp"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = RenderConfig::with_background([0.1, 0.1, 0.1]);
    let mut failures = Vec::new();

    // Serialization: bit-exact round trip.
    for i in 0..PROPERTY_INSTANCES {
        let spec: VariantSpec = variants[i % variants.len()].parse().unwrap();
        let n = rng.gen_range(0..40);
        let mut scene = random_scene(&mut rng, &spec, n, 1.2);
        for s in &mut scene.surfels {
            if let Appearance::MovableKernels(k) = &mut s.appearance {
                k.lambda_e = rng.gen_range(0.0..2.0);
            }
        }
        let bytes = encode_scene(&scene).unwrap();
        let back = decode_scene(&bytes).unwrap();
        let same = back.len() == scene.len()
            && back.surfels.iter().zip(&scene.surfels).all(|(a, b)| {
                a.to_flat().iter().map(|v| v.to_bits()).eq(b.to_flat().iter().map(|v| v.to_bits())) && a == b
            });
        if !same || encode_scene(&back).unwrap() != bytes {
            failures.push("serialization");
            break;
        }
    }

    // Transmittance: appending a surfel behind all others never lowers the
    // accumulated alpha of any pixel.
    for i in 0..PROPERTY_INSTANCES {
        let spec: VariantSpec = variants[i % variants.len()].parse().unwrap();
        let mut scene = random_scene(&mut rng, &spec, 12, 0.0);
        scene
            .surfels
            .sort_by(|a, b| a.geometry.center.z.total_cmp(&b.geometry.center.z));
        let mut prev = vec![0.0; 48 * 40];
        let mut ok = true;
        for n in 1..=scene.len() {
            let sub = Scene::new(scene.surfels[..n].to_vec());
            let out = render(&sub, &test_camera(), &config).unwrap();
            ok &= out.alpha_accum.iter().zip(&prev).all(|(a, p)| *a >= *p && *a <= 1.0);
            prev = out.alpha_accum;
        }
        if !ok {
            failures.push("transmittance monotonicity");
            break;
        }
    }

    // Sort-permutation invariance: input order does not change the image.
    for i in 0..PROPERTY_INSTANCES {
        let spec: VariantSpec = variants[i % variants.len()].parse().unwrap();
        let scene = random_scene(&mut rng, &spec, 25, 1.2);
        let mut shuffled = scene.clone();
        use rand::seq::SliceRandom;
        shuffled.surfels.shuffle(&mut rng);
        let a = render(&scene, &test_camera(), &config).unwrap();
        let b = render(&shuffled, &test_camera(), &config).unwrap();
        if a.color != b.color {
            failures.push("permutation invariance");
            break;
        }
    }

    // Rigid motion of scene and camera together.
    let mut worst_rigid: f64 = 0.0;
    for i in 0..PROPERTY_INSTANCES {
        let spec: VariantSpec = variants[i % variants.len()].parse().unwrap();
        let scene = random_scene(&mut rng, &spec, 20, 1.2);
        let motion = Isometry3::from_parts(
            Translation3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            UnitQuaternion::from_euler_angles(rng.gen_range(-3.1..3.1), rng.gen_range(-1.5..1.5), rng.gen_range(-3.1..3.1)),
        );
        let moved = Scene::new(
            scene
                .surfels
                .iter()
                .map(|s| Surfel {
                    geometry: s.geometry.transformed(&motion),
                    ..s.clone()
                })
                .collect(),
        );
        // SH is defined in world space, so compare the view-independent band.
        let cfg = RenderConfig {
            sh_degree_limit: Some(0),
            ..config.clone()
        };
        let a = render(&scene, &test_camera(), &cfg).unwrap().color;
        let b = render(&moved, &test_camera().transformed(&motion), &cfg).unwrap().color;
        worst_rigid = worst_rigid.max(max_diff(&a, &b));
    }
    if worst_rigid > RIGID_TOL {
        failures.push("rigid-motion invariance");
    }
    let elapsed = start.elapsed();
    if elapsed >= PROPERTY_BUDGET {
        failures.push("time budget");
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("4 suites x {PROPERTY_INSTANCES} instances; rigid-motion max diff {worst_rigid:.2e}")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    }
}

fn main() {
    // Under `cargo test -- <filter>` style invocations, honor --list like a harness.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results = Vec::new();
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        line(n, name, &o, start.elapsed());
        results.push(o.passed);
    };
    report(1, "parameter counts", &mut criterion_1);
    report(2, "gradient fidelity", &mut criterion_2);
    report(3, "degeneracy equivalences", &mut criterion_3);
    report(4, "disc4 teaser", &mut || criterion_4(dir.path()));
    let start = Instant::now();
    let (five, six) = criteria_5_and_6(dir.path());
    line(5, "limited-budget trend", &five, start.elapsed());
    line(6, "kernel containment", &six, Duration::ZERO);
    let (p5, p6) = (five.passed, six.passed);
    report(7, "determinism", &mut || criterion_7(dir.path()));
    report(8, "property suites", &mut criterion_8);
    let all = results.iter().all(|&p| p) && p5 && p6;
    if !all {
        std::process::exit(1);
    }
}
