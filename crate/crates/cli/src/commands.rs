use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use xcam_core::blocks::{build_network, load_weights, save_weights, Family, FamilyOptions, Model, NetworkConfig, Scale};
use xcam_core::cam::{cam_for_image, to_gray8};
use xcam_core::data::{generate_synthetic, load_dataset, preprocess, read_gray, write_pgm, write_ppm, write_synthetic, SynthConfig};
use xcam_core::evaluation::{confusion, cross_validate, metrics_from_confusion, predict_indices, CrossValConfig, THRESHOLD};
use xcam_core::training::{train as train_model, AdamConfig, EpochRecord, LabeledImages, ScheduleConfig, TrainConfig};
use xcam_core::{Error, Grid, Real, Result};

use crate::config::{KeySpec, Resolved};

pub const SYNTH_KEYS: &[KeySpec] = &[
    ("n", Some("100")),
    ("size", Some("64")),
    ("dilation", Some("1.8")),
    ("noise", Some("0.15")),
    ("thickness", Some("0.06")),
    ("radius_min", Some("0.16")),
    ("radius_max", Some("0.26")),
    ("seed", None),
    ("out", None),
];

/// Shared by `train`, `crossval` and `cam`, so one file configures all three.
pub const RUN_KEYS: &[KeySpec] = &[
    ("family", Some("se_resnext")),
    ("depth_multiplier", Some("1")),
    ("width_multiplier", Some("1")),
    ("cardinality", Some("4")),
    ("resnext_width_factor", Some("2")),
    ("se_reduction", Some("16")),
    ("input_size", Some("512")),
    ("head", Some("single")),
    ("crop", Some("512")),
    ("lr0", Some("0.001")),
    ("beta1", Some("0.9")),
    ("beta2", Some("0.999")),
    ("eps", Some("1e-8")),
    ("epochs", Some("120")),
    ("step_epochs", Some("30")),
    ("decay_factor", Some("0.1")),
    ("batch_size", Some("32")),
    ("k", Some("10")),
    ("jobs", Some("1")),
    ("class", Some("1")),
    ("alpha", Some("0.5")),
    ("seed", None),
    ("manifest", None),
    ("weights", None),
    ("image", None),
    ("out", None),
];

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    write_file(path, text)
}

/// Fails on an existing non-directory so nothing is written before the error.
fn check_out_dir(out: &Path) -> Result<()> {
    if out.exists() && !out.is_dir() {
        return Err(Error::Validation(format!("{} exists and is not a directory", out.display())));
    }
    Ok(())
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))
}

fn print_config(cfg: &Resolved) -> Result<()> {
    print!("{}", cfg.render());
    Ok(())
}

pub fn synth(cfg: &Resolved, print_only: bool) -> Result<()> {
    if print_only {
        return print_config(cfg);
    }
    let sc = SynthConfig {
        n_per_class: cfg.get("n")?,
        size: cfg.get("size")?,
        radius_range: (cfg.get("radius_min")?, cfg.get("radius_max")?),
        thickness: cfg.get("thickness")?,
        dilation: cfg.get("dilation")?,
        noise: cfg.get("noise")?,
        seed: cfg.get("seed")?,
    };
    let out: PathBuf = cfg.get("out")?;
    sc.validate()?;
    check_out_dir(&out)?;
    let set = generate_synthetic(&sc)?;
    create_out_dir(&out)?;
    write_synthetic(&out, &set)?;
    eprintln!(
        "wrote {} images ({} per class, {}x{}) to {}",
        set.images.len(),
        sc.n_per_class,
        sc.size,
        sc.size,
        out.display()
    );
    Ok(())
}

struct RunConfig {
    net: NetworkConfig,
    train: TrainConfig,
    crop: usize,
}

fn run_config(cfg: &Resolved, seed: u64) -> Result<RunConfig> {
    let logits = match cfg.get::<String>("head")?.as_str() {
        "single" => 1,
        "pair" => 2,
        other => return Err(Error::Config(format!("head must be single or pair, got {other:?}"))),
    };
    let net = NetworkConfig {
        family: cfg.get::<Family>("family")?,
        scale: Scale {
            depth_multiplier: cfg.get("depth_multiplier")?,
            width_multiplier: cfg.get("width_multiplier")?,
        },
        options: FamilyOptions {
            cardinality: cfg.get("cardinality")?,
            resnext_width_factor: cfg.get("resnext_width_factor")?,
            se_reduction: cfg.get("se_reduction")?,
        },
        input_size: cfg.get("input_size")?,
        logits,
        seed,
    };
    net.validate()?;
    let train = TrainConfig {
        adam: AdamConfig {
            beta1: cfg.get("beta1")?,
            beta2: cfg.get("beta2")?,
            eps: cfg.get("eps")?,
            lr0: cfg.get("lr0")?,
        },
        schedule: ScheduleConfig {
            step_epochs: cfg.get("step_epochs")?,
            decay_factor: cfg.get("decay_factor")?,
            total_epochs: cfg.get("epochs")?,
            batch_size: cfg.get("batch_size")?,
        },
    };
    train.validate()?;
    let crop: usize = cfg.get("crop")?;
    if crop == 0 {
        return Err(Error::Config("crop must be >= 1".into()));
    }
    Ok(RunConfig { net, train, crop })
}

/// Loads and preprocesses every image of the manifest.
fn load_inputs(cfg: &Resolved, run: &RunConfig) -> Result<(Vec<Grid<Real>>, Vec<u8>)> {
    let path: PathBuf = cfg.get("manifest")?;
    let ds = load_dataset(&path)?;
    let images = ds
        .images
        .iter()
        .map(|g| preprocess(g, run.crop, run.net.input_size))
        .collect::<Result<Vec<_>>>()?;
    Ok((images, ds.manifest.labels()))
}

fn epoch_line(prefix: &str, total: usize, r: &EpochRecord) {
    eprintln!("{prefix}epoch {}/{total} lr {:e} loss {:.6}", r.epoch + 1, r.lr, r.mean_loss);
}

fn manifest_config(cfg: &Resolved, run: &RunConfig) -> Value {
    json!({
        "resolved": cfg.to_json(),
        "network": run.net,
        "train": run.train,
        "crop": run.crop,
    })
}

pub fn train(cfg: &Resolved, print_only: bool) -> Result<()> {
    if print_only {
        return print_config(cfg);
    }
    let seed: u64 = cfg.get("seed")?;
    let run = run_config(cfg, seed)?;
    let out: PathBuf = cfg.get("out")?;
    let mut model = build_network(&run.net)?;
    let (images, labels) = load_inputs(cfg, &run)?;
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::Validation("training data must contain both classes".into()));
    }
    check_out_dir(&out)?;

    let data = LabeledImages {
        images: &images,
        labels: &labels,
    };
    let all: Vec<usize> = (0..labels.len()).collect();
    let total = run.train.schedule.total_epochs;
    let mut manifest = train_model(&mut model, data, &all, &run.train, seed, |r| epoch_line("", total, r))?;
    let scores = predict_indices(&model, data, &all, run.train.schedule.batch_size)?;
    let metrics = metrics_from_confusion(&confusion(&scores, &labels, THRESHOLD)?)?;
    manifest.config = manifest_config(cfg, &run);
    manifest.final_metrics = Some(json!({ "training_set": metrics }));

    create_out_dir(&out)?;
    save_weights(&out.join("weights.xcw"), &model)?;
    write_json(&out.join("run_manifest.json"), &serde_json::to_value(&manifest).expect("manifest serializes"))?;
    write_file(&out.join("config.txt"), cfg.render())?;
    eprintln!("trained {} on {} images; weights in {}", run.net.family.label(), labels.len(), out.display());
    Ok(())
}

pub fn crossval(cfg: &Resolved, print_only: bool) -> Result<()> {
    if print_only {
        return print_config(cfg);
    }
    let seed: u64 = cfg.get("seed")?;
    let run = run_config(cfg, seed)?;
    let cv = CrossValConfig {
        k: cfg.get("k")?,
        seed,
        jobs: cfg.get("jobs")?,
    };
    if cv.jobs == 0 {
        return Err(Error::Config("jobs must be >= 1".into()));
    }
    let out: PathBuf = cfg.get("out")?;
    build_network(&run.net)?;
    let (images, labels) = load_inputs(cfg, &run)?;
    xcam_core::evaluation::stratified_kfold(&labels, cv.k, cv.seed)?;
    check_out_dir(&out)?;

    let total = run.train.schedule.total_epochs;
    let start = Instant::now();
    let result = cross_validate(
        LabeledImages {
            images: &images,
            labels: &labels,
        },
        &run.net,
        &run.train,
        &cv,
        &|f, r| epoch_line(&format!("fold {}/{} ", f + 1, cv.k), total, r),
    )?;

    create_out_dir(&out)?;
    write_json(&out.join("folds.json"), &result.folds_json())?;
    write_json(&out.join("pooled.json"), &result.pooled_json())?;
    write_file(&out.join("pr_curve.csv"), result.curve.to_csv())?;
    write_file(&out.join("report.txt"), result.report())?;
    let fold_runs: Vec<Value> = result
        .folds
        .iter()
        .map(|f| serde_json::to_value(&f.manifest).expect("manifest serializes"))
        .collect();
    write_json(
        &out.join("run_manifest.json"),
        &json!({
            "seed": seed,
            "config": manifest_config(cfg, &run),
            "folds": fold_runs,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    write_file(&out.join("config.txt"), cfg.render())?;
    let sizes: Vec<String> = result.plan.folds.iter().map(|f| f.len().to_string()).collect();
    eprintln!("fold sizes: {}", sizes.join(" "));
    eprint!("{}", result.report());
    Ok(())
}

pub fn cam(cfg: &Resolved, print_only: bool) -> Result<()> {
    if print_only {
        return print_config(cfg);
    }
    // Every parameter comes from the weight file, so the seed is immaterial.
    let seed = cfg.get_opt::<u64>("seed")?.unwrap_or(0);
    let run = run_config(cfg, seed)?;
    let weights: PathBuf = cfg.get("weights")?;
    let image_path: PathBuf = cfg.get("image")?;
    let out: PathBuf = cfg.get("out")?;
    let class: usize = cfg.get("class")?;
    let alpha: Real = cfg.get("alpha")?;
    if class > 1 {
        return Err(Error::Config(format!("class must be 0 or 1, got {class}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut model: Model = build_network(&run.net)?;
    load_weights(&weights, &mut model)?;
    let image = read_gray(&image_path)?;
    check_out_dir(&out)?;
    let rendering = cam_for_image(&model, &image, run.crop, class, alpha)?;

    create_out_dir(&out)?;
    write_pgm(&out.join("cam.pgm"), &to_gray8(&rendering.upsampled))?;
    write_ppm(&out.join("overlay.ppm"), &rendering.overlay)?;
    eprintln!("wrote cam.pgm and overlay.ppm to {}", out.display());
    Ok(())
}
