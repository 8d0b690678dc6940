//! `xcam`: synthesize data, train, cross-validate and render CAM overlays.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure during training.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "xcam", version, about = "Explainable CNN classification with class activation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic ring dataset with ground-truth masks.
    Synth(SynthArgs),
    /// Train one network on every image of a manifest.
    Train(RunArgs),
    /// Stratified k-fold cross-validation with metrics, PR curve and report.
    Crossval(RunArgs),
    /// Class activation map and overlay for one image.
    Cam(RunArgs),
}

#[derive(Args)]
struct Shared {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration to stdout and exit.
    #[arg(long)]
    print_config: bool,
    /// Master seed; falls back to XCAM_SEED, then the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    shared: Shared,
    /// Images per class.
    #[arg(long)]
    n: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Positive-class ring thickness multiplier (> 1).
    #[arg(long)]
    dilation: Option<f64>,
    /// Multiplicative speckle amplitude in [0, 1].
    #[arg(long)]
    noise: Option<f64>,
    /// Baseline ring thickness as a fraction of the size.
    #[arg(long)]
    thickness: Option<f64>,
    #[arg(long)]
    radius_min: Option<f64>,
    #[arg(long)]
    radius_max: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    shared: Shared,
    /// vgg, xception, resnet, resnext, se_resnet or se_resnext.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    depth_multiplier: Option<f64>,
    #[arg(long)]
    width_multiplier: Option<f64>,
    #[arg(long)]
    cardinality: Option<usize>,
    #[arg(long)]
    resnext_width_factor: Option<usize>,
    #[arg(long)]
    se_reduction: Option<usize>,
    /// Network input side in pixels.
    #[arg(long)]
    input_size: Option<usize>,
    /// `single` (one logit) or `pair` (two logits).
    #[arg(long)]
    head: Option<String>,
    /// Largest centred square cropped from each image.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step_epochs: Option<usize>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Dataset manifest CSV (path,label,subject).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of cross-validation folds.
    #[arg(long)]
    k: Option<usize>,
    /// Folds trained concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    /// Weight file written by `train`.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Image to explain (PGM or PNG).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Class whose evidence is mapped: 1 positive, 0 negative.
    #[arg(long)]
    class: Option<usize>,
    /// Heat-map opacity in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
}

/// `(key, value)` pairs for every flag that was given.
macro_rules! given {
    ($args:expr; $($field:ident),*) => {{
        let mut v: Vec<(&'static str, String)> = Vec::new();
        $(if let Some(x) = &$args.$field {
            v.push((stringify!($field), x.to_string()));
        })*
        v
    }};
}

macro_rules! given_paths {
    ($args:expr; $($field:ident),*) => {{
        let mut v: Vec<(&'static str, String)> = Vec::new();
        $(if let Some(x) = &$args.$field {
            v.push((stringify!($field), x.display().to_string()));
        })*
        v
    }};
}

fn shared_flags(s: &Shared) -> Vec<(&'static str, String)> {
    let mut v = given!(s; seed);
    v.extend(given_paths!(s; out));
    v
}

fn run(cli: Cli) -> xcam_core::Result<()> {
    let env_seed = std::env::var(config::SEED_ENV).ok();
    match cli.command {
        Command::Synth(a) => {
            let mut flags = shared_flags(&a.shared);
            flags.extend(given!(a; n, size, dilation, noise, thickness, radius_min, radius_max));
            let cfg = config::Resolved::resolve(commands::SYNTH_KEYS, a.shared.config.as_deref(), env_seed, flags)?;
            commands::synth(&cfg, a.shared.print_config)
        }
        Command::Train(a) => run_args(a, env_seed, commands::train),
        Command::Crossval(a) => run_args(a, env_seed, commands::crossval),
        Command::Cam(a) => run_args(a, env_seed, commands::cam),
    }
}

fn run_args(
    a: RunArgs,
    env_seed: Option<String>,
    cmd: fn(&config::Resolved, bool) -> xcam_core::Result<()>,
) -> xcam_core::Result<()> {
    let mut flags = shared_flags(&a.shared);
    flags.extend(given!(a; family, depth_multiplier, width_multiplier, cardinality, resnext_width_factor,
        se_reduction, input_size, head, crop, lr0, beta1, beta2, eps, epochs, step_epochs, decay_factor,
        batch_size, k, jobs, class, alpha));
    flags.extend(given_paths!(a; manifest, weights, image));
    let cfg = config::Resolved::resolve(commands::RUN_KEYS, a.shared.config.as_deref(), env_seed, flags)?;
    cmd(&cfg, a.shared.print_config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
