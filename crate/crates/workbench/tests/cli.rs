use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supersplat")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn params_prints_counts_and_ratios() {
    let o = cli(&["params", "--variant", "mk"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.contains("81") && s.contains("1.40"), "{s}");

    let o = cli(&["--json", "params", "--variant", "mk", "--k", "8"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["params"], 105);
    let o = cli(&["params", "--variant", "mlp", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["params"], 109);
    assert!((v["ratio"].as_f64().unwrap() - 109.0 / 58.0).abs() < 1e-15);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&cli(&["params", "--variant", "nope"])), 2);
    assert_eq!(code(&cli(&["frobnicate"])), 2);
    assert_eq!(code(&cli(&["params", "--variant", "bilinear", "--k", "3"])), 2);
    assert_eq!(code(&cli(&["make-synthetic", "--kind", "teapot", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["eval", "--scene", &p(dir.path(), "missing.sgs"), "--data", &p(dir.path(), "missing.json")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.sgs"));
}

#[test]
fn gradcheck_bilinear_passes() {
    let o = cli(&["gradcheck", "--variant", "bilinear", "--seed", "7", "--full-renderer", "--json"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);
}

#[test]
fn render_empty_scene_gives_background() {
    let dir = tempfile::tempdir().unwrap();
    workbench::scene_file::save_scene(&dir.path().join("empty.sgs"), &supersplat::Scene::default()).unwrap();
    std::fs::write(
        dir.path().join("pose.json"),
        r#"{"w": 6, "h": 5, "fl_x": 4.0, "background": [0.2, 0.4, 0.6],
            "transform": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#,
    )
    .unwrap();
    let o = cli(&["render", "--scene", &p(dir.path(), "empty.sgs"), "--pose", &p(dir.path(), "pose.json"), "--out", &p(dir.path(), "out.png")]);
    assert_eq!(code(&o), 0);
    let img = workbench::dataset::read_image(&dir.path().join("out.png"), false).unwrap();
    assert_eq!((img.width(), img.height()), (6, 5));
    let expect = [0.2f64, 0.4, 0.6].map(|c| (c * 255.0).round() / 255.0);
    assert!(img.pixels().iter().all(|px| *px == expect));
    // Missing camera source is a usage error.
    assert_eq!(code(&cli(&["render", "--scene", &p(dir.path(), "empty.sgs"), "--out", &p(dir.path(), "x.png")])), 2);
}

#[test]
fn fit_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| p(dir.path(), n);
    assert_eq!(code(&cli(&["make-synthetic", "--kind", "textured_quad", "--out", &d("data"), "--seed", "1", "--size", "32", "--views", "2", "--init-points", "30"])), 0);
    let o = cli(&[
        "fit", "--data", &d("data/transforms.json"), "--variant", "bilinear", "--iters", "60", "--seed", "2", "--max-gaussians", "40",
        "--out", &d("scene.sgs"), "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(fit["gaussian_count"].as_u64().unwrap() <= 40);

    let log = std::fs::read_to_string(dir.path().join("scene.log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records[0]["iteration"], 0);
    assert_eq!(records.last().unwrap()["iteration"], 60);
    for key in ["iteration", "loss", "psnr", "gaussian_count", "wall_ms"] {
        assert!(records[0].get(key).is_some(), "{key}");
    }

    let o = cli(&["eval", "--scene", &d("scene.sgs"), "--data", &d("data/transforms.json"), "--out", &d("report.json")]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let eval_psnr = report["mean_psnr"].as_f64().unwrap();
    let log_psnr = records.last().unwrap()["psnr"].as_f64().unwrap();
    assert!((eval_psnr - log_psnr).abs() <= 1e-9, "{eval_psnr} vs {log_psnr}");
    assert_eq!(report["views"].as_array().unwrap().len(), 2);

    // A config file is honored, with flags taking precedence.
    std::fs::write(dir.path().join("cfg.json"), r#"{"iterations": 5, "eval_interval": 1, "seed": 99}"#).unwrap();
    let o = cli(&[
        "fit", "--data", &d("data/transforms.json"), "--variant", "constant", "--seed", "4", "--config", &d("cfg.json"),
        "--out", &d("c.sgs"), "--json",
    ]);
    assert_eq!(code(&o), 0);
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((fit["iterations"].as_u64(), fit["seed"].as_u64()), (Some(5), Some(4)));
    assert_eq!(std::fs::read_to_string(dir.path().join("c.log.jsonl")).unwrap().lines().count(), 6);
}
