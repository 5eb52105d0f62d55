use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srqa_core::GrayImage;

fn srqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srqa"))
        .args(args)
        .env_remove("SRQA_CACHE_DIR")
        .output()
        .expect("run srqa")
}

fn ok(args: &[&str]) -> String {
    let out = srqa(args);
    assert!(
        out.status.success(),
        "srqa {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(format!("{}/../core/tests/data/{name}", env!("CARGO_MANIFEST_DIR")))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn features_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let img = fixture("grass.png");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["features", s(&img), "--out", s(&a)]);
    ok(&["features", s(&img), "--out", s(&b)]);
    let text = std::fs::read(&a).unwrap();
    assert_eq!(text, std::fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(v["dims"], 138);
    assert_eq!(v["local"].as_array().unwrap().len(), 18);
    assert_eq!(v["global"].as_array().unwrap().len(), 45);
    assert_eq!(v["spatial"].as_array().unwrap().len(), 75);

    let csv = ok(&["features", s(&img), "--format", "csv"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 139);
    assert!(lines[0].starts_with("image,local_00"));
}

#[test]
fn tiny_image_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tiny.png");
    GrayImage::constant(8, 8, 0.5).unwrap().save_png(&p).unwrap();
    let out = srqa(&["features", s(&p)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("too small"));
}

#[test]
fn downsample_by_four() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.png");
    GrayImage::from_fn(128, 128, |x, y| ((x ^ y) % 32) as f64 / 31.0)
        .unwrap()
        .save_png(&src)
        .unwrap();
    let lr = dir.path().join("lr.png");
    ok(&["downsample", s(&src), "--scale", "4", "--sigma", "1.2", "--out", s(&lr)]);
    let img = srqa_core::image::load_image(&lr).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    assert!(!srqa(&["downsample", s(&src), "--scale", "1", "--sigma", "1", "--out", s(&lr)]).status.success());
    assert!(!srqa(&["downsample", s(&src), "--scale", "2", "--sigma", "-1", "--out", s(&lr)]).status.success());
}

#[test]
fn aggregate_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.csv");
    let mut text = String::from("image_path,ref_id,method,s,sigma,rating\n");
    for i in 0..50 {
        text += &format!("x.png,baby,a,4,1.2,{}\n", i % 10);
    }
    std::fs::write(&ratings, text).unwrap();
    let out = dir.path().join("manifest.csv");
    ok(&["aggregate", s(&ratings), "--out", s(&out)]);
    let m = std::fs::read_to_string(&out).unwrap();
    assert_eq!(m.lines().next().unwrap(), "image_path,ref_id,method,s,sigma,score");
    assert_eq!(m.lines().nth(1).unwrap(), "x.png,baby,a,4,1.2,4.5");
}

#[test]
fn rejects_invalid_flags() {
    assert!(!srqa(&["train", "--manifest", "m.csv", "--out", "x", "--trees", "0"]).status.success());
    assert!(!srqa(&["evaluate", "--manifest", "m.csv", "--out", "x", "--repetitions", "0"]).status.success());
    let out = srqa(&["evaluate", "--manifest", "/nonexistent/m.csv", "--out", "x", "--protocol", "3way"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("protocol"));
}

#[test]
fn desk_train_predict_evaluate_fuse() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cache = root.join("cache");
    let sources: Vec<PathBuf> = ["camera", "astronaut", "coffee", "chelsea", "rocket"]
        .iter()
        .map(|n| fixture(&format!("{n}.png")))
        .collect();
    let desk = root.join("desk");
    let mut args = vec!["desk", "--out", s(&desk), "--seed", "3"];
    args.extend(sources.iter().map(|p| s(p)));
    ok(&args);
    let manifest = desk.join("manifest.csv");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 46);

    let model = root.join("model.json");
    ok(&[
        "train", "--manifest", s(&manifest), "--out", s(&model), "--trees", "30", "--seed", "1",
        "--cache-dir", s(&cache),
    ]);
    let model2 = root.join("model2.json");
    ok(&[
        "--threads", "2", "train", "--manifest", s(&manifest), "--out", s(&model2), "--trees", "30", "--seed", "1",
        "--no-cache",
    ]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&model2).unwrap());

    let sr = desk.join("images/camera_bicubic-bp_x2.png");
    let score = ok(&["predict", "--model", s(&model), s(&sr)]);
    let line = score.trim_end();
    assert_eq!(line.split('.').nth(1).map(str::len), Some(1), "{line}");
    let v: f64 = line.parse().unwrap();
    assert!((0.0..=10.0).contains(&v));

    let report_dir = root.join("report");
    let table = ok(&[
        "evaluate", "--manifest", s(&manifest), "--protocol", "5fold", "--trees", "20", "--repetitions", "1",
        "--out", s(&report_dir), "--cache-dir", s(&cache),
    ]);
    assert!(table.contains("overall"));
    for f in ["report.json", "report.csv", "predictions.csv"] {
        assert!(report_dir.join(f).is_file(), "{f}");
    }
    let lmo = ok(&[
        "evaluate", "--manifest", s(&manifest), "--protocol", "leave-method-out", "--holdout", "1", "--trees", "10",
        "--repetitions", "1", "--out", s(&root.join("lmo")), "--cache-dir", s(&cache),
    ]);
    assert!(lmo.contains("leave-method-out"));

    let fused = root.join("fused.png");
    let a = desk.join("images/camera_nearest_x2.png");
    let b = desk.join("images/camera_bicubic-bp_x2.png");
    ok(&["fuse", s(&a), s(&b), "--model", s(&model), "--out", s(&fused)]);
    assert!(fused.is_file());
    let map: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("fused.json")).unwrap()).unwrap();
    assert_eq!(map["cells"].as_array().unwrap().len(), 9);
}
