use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn xcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcam"))
        .args(args)
        .env_remove("XCAM_SEED")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    o
}

fn synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join("data");
    let out_s = out.to_str().unwrap();
    ok(xcam(&["synth", "--n", &n.to_string(), "--size", "32", "--seed", &seed.to_string(), "--out", out_s]));
    out
}

/// Flags for a network small enough to train in a second or two.
const TINY: &[&str] = &[
    "--family",
    "vgg",
    "--depth-multiplier",
    "0.5",
    "--width-multiplier",
    "0.25",
    "--input-size",
    "16",
    "--epochs",
    "2",
    "--step-epochs",
    "1",
    "--batch-size",
    "4",
];

fn run(cmd: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    xcam(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_writes_the_requested_counts_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), 3, 9);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 6);
    assert_eq!(fs::read_dir(a.join("masks")).unwrap().count(), 6);
    let b = dir.path().join("again");
    ok(xcam(&["synth", "--n", "3", "--size", "32", "--seed", "9", "--out", b.to_str().unwrap()]));
    for i in 0..6 {
        let name = format!("images/img_{i:04}.pgm");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn invalid_dilation_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let o = xcam(&["synth", "--dilation", "0.9", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dilation"));
    assert!(!out.exists());
}

#[test]
fn print_config_shows_the_recipe_defaults() {
    let o = ok(xcam(&["train", "--print-config"]));
    let text = String::from_utf8(o.stdout).unwrap();
    for line in ["lr0 = 0.001", "epochs = 120", "batch_size = 32", "family = se_resnext", "# seed is unset"] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
}

#[test]
fn seed_precedence_is_file_then_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# test\nseed = 5\nepochs = 7\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let show = |env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_xcam"));
        c.args(["train", "--print-config", "--config", cfg_s]).env_remove("XCAM_SEED");
        if let Some(v) = env {
            c.env("XCAM_SEED", v);
        }
        if let Some(v) = flag {
            c.args(["--seed", v]);
        }
        String::from_utf8(ok(c.output().unwrap()).stdout).unwrap()
    };
    assert!(show(None, None).contains("seed = 5\n"));
    assert!(show(None, None).contains("epochs = 7\n"));
    assert!(show(Some("6"), None).contains("seed = 6\n"));
    assert!(show(Some("6"), Some("7")).contains("seed = 7\n"));
    fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = xcam(&["train", "--print-config", "--config", cfg_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn missing_manifest_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("nowhere.csv");
    let out = dir.path().join("out");
    let o = run("train", &["--seed", "1", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"));
    assert!(!out.exists());
    let o = xcam(&["train", "--epochs", "zero"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_cam_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 2);
    let manifest = data.join("manifest.csv");
    let model = dir.path().join("model");
    let o = ok(run("train", &["--seed", "3", "--manifest", manifest.to_str().unwrap(), "--out", model.to_str().unwrap()]));
    assert!(stderr(&o).contains("epoch 2/2"));
    let rm = read_json(&model.join("run_manifest.json"));
    assert_eq!(rm["seed"], 3);
    let weights = model.join("weights.xcw");
    let image = data.join("images/img_0001.pgm");
    let cam = |out: &Path, alpha: &str, family: &str| {
        let mut args: Vec<&str> = TINY.to_vec();
        let fam = args.iter().position(|a| *a == "vgg").unwrap();
        args[fam] = family;
        let mut full = vec!["cam"];
        full.extend(args);
        full.extend([
            "--weights",
            weights.to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
            "--alpha",
            alpha,
            "--out",
            out.to_str().unwrap(),
        ]);
        xcam(&full)
    };
    let (a, b) = (dir.path().join("cam_a"), dir.path().join("cam_b"));
    ok(cam(&a, "0.5", "vgg"));
    ok(cam(&b, "0.5", "vgg"));
    for f in ["cam.pgm", "overlay.ppm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let plain = dir.path().join("cam_plain");
    ok(cam(&plain, "0", "vgg"));
    let overlay = xcam_core::data::decode_ppm(&fs::read(plain.join("overlay.ppm")).unwrap()).unwrap();
    let gray = xcam_core::data::read_gray(&image).unwrap();
    for y in 0..gray.height() {
        for x in 0..gray.width() {
            let g = gray.get(y, x);
            assert_eq!(overlay.pixel(y, x), [g, g, g]);
        }
    }
    let mismatch = dir.path().join("cam_bad");
    let o = cam(&mismatch, "0.5", "resnet");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!mismatch.join("cam.pgm").exists());
}

#[test]
fn crossval_writes_fold_records_matching_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 5);
    let manifest = data.join("manifest.csv");
    let out = dir.path().join("cv");
    ok(run(
        "crossval",
        &["--seed", "5", "--k", "2", "--manifest", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()],
    ));
    let folds = read_json(&out.join("folds.json"));
    assert_eq!(folds.as_array().unwrap().len(), 2);
    let pooled = read_json(&out.join("pooled.json"));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    for key in ["accuracy", "sensitivity", "specificity"] {
        if let Some(v) = pooled["metrics"][key].as_f64() {
            assert!(report.contains(&format!("{v:.2}")), "{key} {v} not in\n{report}");
        }
    }
    let curve = fs::read_to_string(out.join("pr_curve.csv")).unwrap();
    assert!(curve.starts_with("threshold,recall,precision\n"));
}

#[test]
fn cohort_of_153_splits_into_folds_of_15_and_16() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 88, 6);
    let text = fs::read_to_string(data.join("manifest.csv")).unwrap();
    let mut lines = text.lines();
    let mut subset = vec![lines.next().unwrap().to_string()];
    let (mut neg, mut pos) = (0, 0);
    for line in lines {
        if line.contains(",1,") {
            pos += 1;
            subset.push(line.to_string());
        } else if neg < 65 {
            neg += 1;
            subset.push(line.to_string());
        }
    }
    assert_eq!((pos, neg), (88, 65));
    let m = data.join("cohort.csv");
    fs::write(&m, subset.join("\n") + "\n").unwrap();
    let out = dir.path().join("cv");
    let o = ok(run(
        "crossval",
        &["--seed", "1", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()],
    ));
    let sizes_line = stderr(&o).lines().find(|l| l.starts_with("fold sizes:")).unwrap().to_string();
    let sizes: Vec<usize> = sizes_line["fold sizes:".len()..].split_whitespace().map(|s| s.parse().unwrap()).collect();
    assert_eq!(sizes.len(), 10);
    assert_eq!(sizes.iter().sum::<usize>(), 153);
    assert!(sizes.iter().all(|s| *s == 15 || *s == 16), "{sizes:?}");
}

#[test]
fn impossible_fold_count_exits_2_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 7);
    let out = dir.path().join("cv");
    let o = run(
        "crossval",
        &["--seed", "1", "--k", "20", "--manifest", data.join("manifest.csv").to_str().unwrap(), "--out", out.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = run("crossval", &["--k", "2", "--manifest", data.join("manifest.csv").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}
