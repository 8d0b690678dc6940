//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default; pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 4 9`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use xcam_core::blocks::{build_network, write_weights, Family, NetworkConfig, Scale};
use xcam_core::cam::{cam_for_model, compute_cam};
use xcam_core::data::{encode_pgm, encode_ppm, generate_synthetic, preprocess, SynthConfig, SyntheticSet, CROP_SIZE};
use xcam_core::evaluation::{
    confusion, cross_validate, metrics_from_confusion, pr_curve, render_report, stratified_kfold, CrossValConfig,
    CrossValidation, MetricsRecord, METRIC_ROWS,
};
use xcam_core::training::{lr_at, LabeledImages, TrainConfig};
use xcam_core::{Dims, Grid, Real};

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1. Gradient correctness.
const GRAD_STEP: Real = 1e-5;
const GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(300);

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, family) in Family::ALL.into_iter().enumerate() {
        let mut cfg = NetworkConfig::new(family, 32, 100 + i as u64);
        cfg.scale = Scale {
            depth_multiplier: 0.5,
            width_multiplier: 0.25,
        };
        let mut model = build_network(&cfg).map_err(|e| e.to_string())?;
        generic_point(&mut model, 200 + i as u64);
        let x = random_tensor(&mut rng(i as u64), Dims::new(1, 1, 32, 32), 0.0, 1.0);
        let r = gradient_check(&mut model, &x, &[1.0], GRAD_STEP);
        ok &= r.max_error < GRAD_TOL;
        lines.push(format!(
            "{} {} params max rel err {:.2e} at {} ({} across a ReLU kink re-checked with a smaller step)",
            family.name(),
            r.checked,
            r.max_error,
            r.worst,
            r.reduced_step
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < GRAD_BUDGET;
    check(ok, format!("{}; {:.0} s", lines.join("; "), elapsed.as_secs_f64()))
}

// 2. Spatial mean of the CAM plus the class bias equals the class logit.
const CAM_IDENTITY_TOL: f64 = 1e-10;

fn cam_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut r = rng(2);
    for trial in 0..100u64 {
        let family = Family::ALL[trial as usize % 6];
        let input = [16, 24, 32][r.random_range(0..3)];
        let mut cfg = NetworkConfig::new(family, input, trial);
        cfg.logits = 1 + (trial as usize / 6) % 2;
        cfg.scale = Scale {
            depth_multiplier: [0.5, 1.0][r.random_range(0..2)],
            width_multiplier: [0.25, 0.5][r.random_range(0..2)],
        };
        let mut model = build_network(&cfg).map_err(|e| e.to_string())?;
        for stats in model.running_mut() {
            for (m, v) in stats.mean.iter_mut().zip(stats.var.iter_mut()) {
                *m = r.random_range(-0.5..0.5);
                *v = r.random_range(0.5..2.0);
            }
        }
        let x = random_tensor(&mut r, Dims::new(1, 1, input, input), 0.0, 1.0);
        let out = model.forward(&x, false).map_err(|e| e.to_string())?;
        for class in 0..2 {
            let (w, bias) = model.class_weights(class).map_err(|e| e.to_string())?;
            let cam = compute_cam(&out.features, &w, class).map_err(|e| e.to_string())?;
            let logit = if cfg.logits == 1 {
                let z = out.logits.data()[0];
                if class == 1 {
                    z
                } else {
                    -z
                }
            } else {
                out.logits.data()[class]
            };
            worst = worst.max((cam.raw.mean() + bias - logit).abs() as f64);
        }
    }
    check(worst <= CAM_IDENTITY_TOL, format!("100 models, 2 classes each, max |mean(M_c) + b_c - z_c| = {worst:.2e}"))
}

// 3. Recipe constants.
fn recipe() -> Outcome {
    let cfg = TrainConfig::default();
    let s = cfg.schedule;
    let lr = |e| lr_at(e, cfg.adam.lr0, &s).map_err(|e| e.to_string());
    let expected = [(0, 1e-3), (30, 1e-4), (60, 1e-5), (90, 1e-6)];
    let mut ok = true;
    for (epoch, want) in expected {
        ok &= lr(epoch)? == want;
    }
    ok &= s.total_epochs == 120 && s.batch_size == 32 && s.step_epochs == 30;
    ok &= cfg.adam.beta1 == 0.9 && cfg.adam.beta2 == 0.999 && cfg.adam.eps == 1e-8 && cfg.adam.lr0 == 1e-3;
    let json = serde_json::to_value(cfg).map_err(|e| e.to_string())?;
    ok &= json["adam"]["beta1"] == 0.9 && json["adam"]["beta2"] == 0.999 && json["adam"]["eps"] == 1e-8;
    ok &= json["schedule"]["total_epochs"] == 120 && json["schedule"]["batch_size"] == 32;
    check(
        ok,
        format!(
            "lr(0,30,60,90) = {:e}, {:e}, {:e}, {:e}; {} epochs, batch {}, ADAM({}, {}, {:e})",
            lr(0)?,
            lr(30)?,
            lr(60)?,
            lr(90)?,
            s.total_epochs,
            s.batch_size,
            cfg.adam.beta1,
            cfg.adam.beta2,
            cfg.adam.eps
        ),
    )
}

// 4. Metric oracles.
const RATIONAL_TOL: f64 = 1e-12;

fn metric_oracles() -> Outcome {
    let mut r = rng(4);
    let mut exhaustive = 0;
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let n = if trial % 2 == 0 { r.random_range(1..=12) } else { r.random_range(1..=60) };
        let levels = r.random_range(2..=20);
        let scores: Vec<Real> = (0..n).map(|_| r.random_range(0..=levels) as Real / levels as Real).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 1;
        labels.shuffle(&mut r);

        let counts = recount(&scores, &labels, 0.5);
        let c = confusion(&scores, &labels, 0.5).map_err(|e| e.to_string())?;
        if [c.tp, c.fp, c.r#fn, c.tn] != counts {
            failures.push(format!("trial {trial}: confusion"));
            continue;
        }
        let m = metrics_from_confusion(&c).map_err(|e| e.to_string())?;
        for ((label, get), want) in METRIC_ROWS.iter().zip(rational_metrics(counts)) {
            let agree = match (get(&m), want) {
                (Some(a), Some(b)) => (a - q_to_f64(b)).abs() <= RATIONAL_TOL * q_to_f64(b).abs().max(1.0),
                (None, None) => true,
                _ => false,
            };
            if !agree {
                failures.push(format!("trial {trial}: {label}"));
            }
        }

        let curve = pr_curve(&scores, &labels).map_err(|e| e.to_string())?;
        if !(curve.auprc >= 0.0 && curve.auprc <= 1.0) {
            failures.push(format!("trial {trial}: AUPRC out of range"));
        }
        if (curve.auprc - q_to_f64(auprc_rational(&scores, &labels))).abs() > RATIONAL_TOL {
            failures.push(format!("trial {trial}: AUPRC vs rational"));
        }
        if n <= 12 {
            exhaustive += 1;
            if curve.auprc != auprc_recount(&scores, &labels) {
                failures.push(format!("trial {trial}: AUPRC vs exhaustive recount"));
            }
        }
    }
    let mut perfect_err: f64 = 0.0;
    for n in 2..=50usize {
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i < n.div_ceil(3))).collect();
        let scores: Vec<Real> = (0..n).map(|i| (n - i) as Real / n as Real).collect();
        perfect_err = perfect_err.max((pr_curve(&scores, &labels).map_err(|e| e.to_string())?.auprc - 1.0).abs());
    }
    check(
        failures.is_empty() && perfect_err <= 1e-12,
        format!(
            "1000 instances ({exhaustive} exhaustive with n <= 12); perfect ranking |AUPRC - 1| = {perfect_err:.1e}; {} mismatches{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    )
}

// 5. Fold protocol on the 88/65 cohort.
fn folds() -> Outcome {
    let labels: Vec<u8> = (0..153).map(|i| u8::from(i < 88)).collect();
    for seed in 0..100 {
        let plan = stratified_kfold(&labels, 10, seed).map_err(|e| e.to_string())?;
        let mut seen: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen != (0..153).collect::<Vec<_>>() {
            return Err(format!("seed {seed}: folds do not partition the cohort"));
        }
        for (f, fold) in plan.folds.iter().enumerate() {
            let pos = fold.iter().filter(|&&i| labels[i] == 1).count();
            let neg = fold.len() - pos;
            if !((15..=16).contains(&fold.len()) && (8..=9).contains(&pos) && (6..=7).contains(&neg)) {
                return Err(format!("seed {seed} fold {f}: {} images, {pos} positive, {neg} negative", fold.len()));
            }
        }
    }
    Ok("100 seeds: every fold holds 15 or 16 images, 8-9 positives, 6-7 negatives; folds partition 0..153".into())
}

// 6. End-to-end learning on synthetic data.
const E2E_ACCURACY: f64 = 90.0;
const E2E_INPUT: usize = 64;

fn synthetic_cohort() -> (SyntheticSet, Vec<Grid<Real>>, Vec<u8>) {
    let set = generate_synthetic(&SynthConfig {
        n_per_class: 100,
        size: 64,
        dilation: 1.8,
        noise: 0.15,
        seed: 7,
        ..SynthConfig::default()
    })
    .expect("valid generator config");
    let images = set.images.iter().map(|g| preprocess(g, CROP_SIZE, E2E_INPUT).unwrap()).collect();
    let labels = set.manifest.labels();
    (set, images, labels)
}

fn reduced_se_resnext(input: usize, seed: u64) -> NetworkConfig {
    let mut cfg = NetworkConfig::new(Family::SeResnext, input, seed);
    cfg.scale = Scale {
        depth_multiplier: 0.5,
        width_multiplier: 0.5,
    };
    cfg
}

struct EndToEnd {
    set: SyntheticSet,
    images: Vec<Grid<Real>>,
    cv: CrossValidation,
}

fn end_to_end() -> (Outcome, Option<EndToEnd>) {
    let (set, images, labels) = synthetic_cohort();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get()).min(5);
    let start = Instant::now();
    let cv = cross_validate(
        LabeledImages {
            images: &images,
            labels: &labels,
        },
        &reduced_se_resnext(E2E_INPUT, 7),
        &TrainConfig::default(),
        &CrossValConfig { k: 5, seed: 7, jobs },
        &|_, _| {},
    );
    let cv = match cv {
        Ok(cv) => cv,
        Err(e) => return (Err(e.to_string()), None),
    };
    let accuracy = cv.pooled.accuracy.unwrap_or(0.0);
    let detail = format!(
        "pooled held-out accuracy {accuracy:.2}% (AUPRC {:.3}) over 5 folds, {jobs} job(s), {:.0} s",
        cv.pooled.auprc.unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    (check(accuracy >= E2E_ACCURACY, detail), Some(EndToEnd { set, images, cv }))
}

// 7. Top-decile CAM pixels inside the ring mask.
const LOCALIZATION: f64 = 0.70;
const LOCALIZATION_IMAGES: usize = 50;

/// Fraction of the `ceil(N/10)` highest-valued pixels that fall inside the
/// mask; ties broken by raster order.
fn top_decile_inside(heat: &Grid<Real>, mask: &Grid<u8>) -> f64 {
    let values = heat.data();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values.len().div_ceil(10);
    let inside = order[..top].iter().filter(|&&i| mask.data()[i] > 0).count();
    inside as f64 / top as f64
}

fn localization(e2e: Option<&EndToEnd>) -> Outcome {
    let e2e = e2e.ok_or("no trained models from criterion 6")?;
    let labels = e2e.set.manifest.labels();
    let mut held_out: Vec<(usize, usize)> = e2e
        .cv
        .folds
        .iter()
        .flat_map(|f| f.test_indices.iter().map(move |&i| (i, f.fold)))
        .filter(|&(i, _)| labels[i] == 1)
        .collect();
    held_out.sort_unstable();
    held_out.truncate(LOCALIZATION_IMAGES);
    if held_out.len() < LOCALIZATION_IMAGES {
        return Err(format!("only {} held-out positives", held_out.len()));
    }
    let mut total = 0.0;
    for &(i, fold) in &held_out {
        let r = cam_for_model(&e2e.cv.models[fold], &e2e.images[i], 1, 0.5).map_err(|e| e.to_string())?;
        total += top_decile_inside(&r.upsampled, &e2e.set.masks[i]);
    }
    let mean = total / held_out.len() as f64;
    check(
        mean >= LOCALIZATION,
        format!("{:.1}% of top-decile CAM pixels inside the ring over {} held-out positives", 100.0 * mean, held_out.len()),
    )
}

// 8. Determinism of a reduced run.
fn reduced_run() -> Result<(Vec<u8>, String, Vec<u8>), String> {
    let set = generate_synthetic(&SynthConfig {
        n_per_class: 12,
        size: 32,
        seed: 8,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let images: Vec<Grid<Real>> = set.images.iter().map(|g| preprocess(g, CROP_SIZE, 32).unwrap()).collect();
    let labels = set.manifest.labels();
    let mut tc = TrainConfig::default();
    tc.schedule.total_epochs = 3;
    tc.schedule.step_epochs = 1;
    tc.schedule.batch_size = 8;
    let cv = cross_validate(
        LabeledImages {
            images: &images,
            labels: &labels,
        },
        &reduced_se_resnext(32, 8),
        &tc,
        &CrossValConfig { k: 2, seed: 8, jobs: 1 },
        &|_, _| {},
    )
    .map_err(|e| e.to_string())?;
    let mut weights = Vec::new();
    for m in &cv.models {
        write_weights(&mut weights, m).map_err(|e| e.to_string())?;
    }
    let json = format!("{}\n{}", cv.folds_json(), cv.pooled_json());
    let r = cam_for_model(&cv.models[0], &images[0], 1, 0.5).map_err(|e| e.to_string())?;
    let mut cam_bytes = encode_pgm(&xcam_core::cam::to_gray8(&r.upsampled));
    cam_bytes.extend(encode_ppm(&r.overlay));
    Ok((weights, json, cam_bytes))
}

fn determinism() -> Outcome {
    let a = reduced_run()?;
    let b = reduced_run()?;
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2];
    check(
        same.iter().all(|&s| s),
        format!(
            "two runs: weights {} bytes identical {}, metrics JSON identical {}, CAM bytes identical {}",
            a.0.len(),
            same[0],
            same[1],
            same[2]
        ),
    )
}

// 9. Report fidelity.
const REPORT_GOLDEN: &str = "\
Metric           SE-ResNext50
Accuracy               72.88*
F1 score               78.26*
Sensitivity            82.64*
Specificity            58.12*
Precision (PPV)        76.35*
NPV                    68.63*

* best value in the row; — undefined (0/0)
";

fn report() -> Outcome {
    let fixture = MetricsRecord {
        accuracy: Some(72.88),
        f1: Some(78.26),
        sensitivity: Some(82.64),
        specificity: Some(58.12),
        ppv: Some(76.35),
        npv: Some(68.63),
        auprc: None,
    };
    let text = render_report(&[("SE-ResNext50".to_string(), fixture)]);
    let column: Vec<String> = text
        .lines()
        .skip(1)
        .take(6)
        .map(|l| l.rsplit(' ').next().unwrap_or("").trim_end_matches('*').to_string())
        .collect();
    let expected = ["72.88", "78.26", "82.64", "58.12", "76.35", "68.63"];
    check(
        text == REPORT_GOLDEN && column == expected,
        format!("column {}", column.join(" / ")),
    )
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failed = 0;
    let mut report_line = |n: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] criterion {n} {name}: {detail}");
    };
    let simple: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "gradient correctness", gradients),
        (2, "CAM logit identity", cam_identity),
        (3, "recipe constants", recipe),
        (4, "metric oracle equivalence", metric_oracles),
        (5, "fold protocol", folds),
    ];
    for (n, name, f) in simple {
        if want(n) {
            report_line(n, name, f());
        }
    }
    if want(6) || want(7) {
        let (outcome, e2e) = end_to_end();
        if want(6) {
            report_line(6, "end-to-end learning", outcome);
        }
        if want(7) {
            report_line(7, "CAM localization", localization(e2e.as_ref()));
        }
    }
    if want(8) {
        report_line(8, "determinism", determinism());
    }
    if want(9) {
        report_line(9, "report fidelity", report());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

