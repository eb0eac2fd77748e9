//! Command-line driver: dataset synthesis, pretraining, calibration,
//! protocol evaluation, and visualization, all from declarative TOML configs.
//!
//! Exit codes: 0 success, 1 validation error (bad config/arguments),
//! 2 runtime failure (I/O, non-finite loss).

mod manifest;

use clap::{Parser, Subcommand};
use congaze::calibrate::{calibrate, CalibrationConfig};
use congaze::datamodel::Dataset;
use congaze::error::Error as CoreError;
use congaze::eval::{
    append_summary_row, ingest_dataset, run_variant, write_dataset, DatasetLayout,
    EvalRunConfig, Protocol, Variant,
};
use congaze::nets::{load_checkpoint, save_checkpoint};
use congaze::synthface::{generate_dataset, SynthDatasetSpec};
use congaze::train::{pretrain, resume_pretrain, write_loss_trace, PretrainConfig};
use congaze::viz::{
    attention_map, export_embedding_scatter, write_heat_csv, write_heat_overlay_png, TsneConfig,
};
use manifest::RunManifest;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "congaze", version, about = "Gaze-contrastive representation learning")]
struct Cli {
    /// Bound the worker thread count for batched tensor work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face dataset on disk.
    Synth {
        /// TOML file deserializing into a dataset spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print the resolved spec and exit without generating.
        #[arg(long)]
        print_config: bool,
    },
    /// Contrastive pretraining of the feature extractor.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Continue a run from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Few-shot supervised calibration from a pretrained checkpoint.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        print_config: bool,
    },
    /// Run ablation variants under a cross-validation protocol.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Variant name, or "all" for the full six-variant table.
        #[arg(long, default_value = "all")]
        variant: String,
        /// Override the protocol's repeat count.
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        print_config: bool,
    },
    /// Export t-SNE scatters or Grad-CAM overlays.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root in the generic_csv layout.
        #[arg(long)]
        data: PathBuf,
        /// "tsne" or "gradcam".
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated 1-based conv layer indices for gradcam. The
        /// default suits resnet18_no_dense (17 conv layers); for tiny_conv
        /// use indices in 1..=4, e.g. "2,3,4".
        #[arg(long, default_value = "9,13,17")]
        layers: String,
        /// Number of images to visualize in gradcam mode.
        #[arg(long, default_value_t = 8)]
        n_images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PretrainFileConfig {
    /// Dataset root (generic_csv layout). Overridable via CONGAZE_DATA_ROOT.
    data_root: PathBuf,
    /// Output directory. Overridable via CONGAZE_OUT_ROOT.
    out_dir: PathBuf,
    pretrain: PretrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrateFileConfig {
    checkpoint: PathBuf,
    data_root: PathBuf,
    out_dir: PathBuf,
    calibration: CalibrationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvaluateFileConfig {
    /// Pretraining dataset root; also the eval root unless `eval_root` is set
    /// (cross-dataset protocols need both).
    data_root: PathBuf,
    eval_root: Option<PathBuf>,
    out_dir: PathBuf,
    protocol: Protocol,
    run: EvalRunConfig,
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CoreError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::validation(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CoreError::validation(format!("{}: {e}", path.display())))
}

fn env_override(var: &str, path: PathBuf) -> PathBuf {
    std::env::var_os(var).map(PathBuf::from).unwrap_or(path)
}

fn print_resolved<T: Serialize>(value: &T) -> Result<(), CoreError> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| CoreError::validation(format!("config serialization: {e}")))?;
    println!("{text}");
    Ok(())
}

fn load_dataset(root: &Path) -> Result<Dataset, CoreError> {
    let layout = if root.join("synth_spec.json").exists() {
        DatasetLayout::Synthetic
    } else {
        DatasetLayout::GenericCsv
    };
    ingest_dataset(root, layout)
}

fn cmd_synth(spec_path: &Path, out: &Path, print_config: bool) -> Result<(), CoreError> {
    let spec: SynthDatasetSpec = read_toml(spec_path)?;
    spec.validate()?;
    if print_config {
        return print_resolved(&spec);
    }
    RunManifest::new("synth", &spec, spec.master_seed, &[spec_path], out)?
        .write(&out.join("manifest.json"))?;
    let dataset = generate_dataset(&spec)?;
    write_dataset(&dataset, out)?;
    std::fs::write(out.join("synth_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    println!(
        "wrote {} samples ({} subjects) to {}",
        dataset.len(),
        dataset.n_subjects(),
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(
    config_path: &Path,
    resume: Option<&Path>,
    print_config: bool,
) -> Result<(), CoreError> {
    let mut cfg: PretrainFileConfig = read_toml(config_path)?;
    cfg.data_root = env_override("CONGAZE_DATA_ROOT", cfg.data_root);
    cfg.out_dir = env_override("CONGAZE_OUT_ROOT", cfg.out_dir);
    cfg.pretrain.validate()?;
    if print_config {
        return print_resolved(&cfg);
    }
    if cfg.pretrain.augment.gaze_constrained && !cfg.data_root.join("landmarks.csv").exists() {
        return Err(CoreError::validation(format!(
            "gaze-constrained augmentation needs {}, which does not exist; \
             generate landmarks or disable augment.gaze_constrained",
            cfg.data_root.join("landmarks.csv").display()
        )));
    }
    RunManifest::new("pretrain", &cfg, cfg.pretrain.seed, &[config_path, &cfg.data_root], &cfg.out_dir)?
        .write(&cfg.out_dir.join("manifest.json"))?;
    let dataset = load_dataset(&cfg.data_root)?;
    let result = match resume {
        Some(ckpt_path) => {
            let ckpt = load_checkpoint(ckpt_path)?;
            resume_pretrain(&dataset, &cfg.pretrain, &ckpt)?
        }
        None => pretrain(&dataset, &cfg.pretrain)?,
    };
    save_checkpoint(&cfg.out_dir.join("checkpoint.cgzw"), &result.checkpoint)?;
    write_loss_trace(&cfg.out_dir.join("loss_trace.csv"), &result.trace)?;
    if let Some(last) = result.trace.last() {
        println!("final loss {:.6} after {} iterations", last.loss, cfg.pretrain.n_iterations);
    } else {
        println!("checkpoint written at initialization (0 iterations)");
    }
    Ok(())
}

fn cmd_calibrate(config_path: &Path, print_config: bool) -> Result<(), CoreError> {
    let mut cfg: CalibrateFileConfig = read_toml(config_path)?;
    cfg.data_root = env_override("CONGAZE_DATA_ROOT", cfg.data_root);
    cfg.out_dir = env_override("CONGAZE_OUT_ROOT", cfg.out_dir);
    cfg.calibration.validate()?;
    if print_config {
        return print_resolved(&cfg);
    }
    RunManifest::new(
        "calibrate",
        &cfg,
        cfg.calibration.seed,
        &[config_path, &cfg.checkpoint, &cfg.data_root],
        &cfg.out_dir,
    )?
    .write(&cfg.out_dir.join("manifest.json"))?;
    let dataset = load_dataset(&cfg.data_root)?;
    let checkpoint = load_checkpoint(&cfg.checkpoint)?;
    let mut rng = congaze::seed::rng(cfg.calibration.seed, &[congaze::seed::DOMAIN_CALIBRATE, 7]);
    let (cal_idx, _) = congaze::calibrate::select_calibration_samples(
        dataset.len(),
        cfg.calibration.n_samples,
        &mut rng,
    )?;
    let samples = congaze::calibrate::samples_by_indices(&dataset, &cal_idx);
    let outcome = calibrate(&checkpoint, &samples, &cfg.calibration)?;
    let mut model = outcome.model;
    save_checkpoint(
        &cfg.out_dir.join("calibrated.cgzw"),
        &model.to_checkpoint(&checkpoint.meta, cfg.calibration.mode),
    )?;
    outcome.record.write(&cfg.out_dir.join("calibration.json"))?;
    println!("final train loss {:.6} rad", outcome.record.final_train_loss);
    Ok(())
}

fn cmd_evaluate(
    config_path: &Path,
    variant_arg: &str,
    repeats: Option<usize>,
    print_config: bool,
) -> Result<(), CoreError> {
    let mut cfg: EvaluateFileConfig = read_toml(config_path)?;
    cfg.data_root = env_override("CONGAZE_DATA_ROOT", cfg.data_root);
    cfg.out_dir = env_override("CONGAZE_OUT_ROOT", cfg.out_dir);
    if let Some(r) = repeats {
        cfg.protocol.n_repeats = r;
    }
    cfg.protocol.validate()?;
    let variants: Vec<Variant> = if variant_arg.eq_ignore_ascii_case("all") {
        congaze::eval::ALL_VARIANTS.to_vec()
    } else {
        vec![Variant::parse(variant_arg)?]
    };
    if print_config {
        return print_resolved(&cfg);
    }
    RunManifest::new("evaluate", &cfg, cfg.run.seed, &[config_path, &cfg.data_root], &cfg.out_dir)?
        .write(&cfg.out_dir.join("manifest.json"))?;
    let pretrain_set = load_dataset(&cfg.data_root)?;
    let eval_set = match &cfg.eval_root {
        Some(root) => load_dataset(root)?,
        None => pretrain_set.clone(),
    };
    let summary = cfg.out_dir.join("summary.csv");
    for variant in variants {
        let report = run_variant(variant, &cfg.protocol, &pretrain_set, &eval_set, &cfg.run)?;
        report.write_json(&cfg.out_dir.join(format!("report_{}.json", variant.name())))?;
        append_summary_row(&summary, &report)?;
        println!(
            "{}: mean {:.3} deg (std {:.3}) over {} folds",
            variant.name(),
            report.mean,
            report.std,
            report.per_fold_errors.len()
        );
    }
    Ok(())
}

fn cmd_visualize(
    checkpoint_path: &Path,
    data_root: &Path,
    mode: &str,
    out: &Path,
    layers: &str,
    n_images: usize,
    seed: u64,
) -> Result<(), CoreError> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let dataset = load_dataset(data_root)?;
    match mode {
        "tsne" => {
            let cfg = TsneConfig::for_points(dataset.len(), seed);
            RunManifest::new("visualize", &cfg, seed, &[checkpoint_path, data_root], out)?
                .write(&out.join("manifest.json"))?;
            export_embedding_scatter(&checkpoint, &dataset, &cfg, "checkpoint", &out.join("tsne"))?;
            println!("wrote {} and {}", out.join("tsne.csv").display(), out.join("tsne.png").display());
        }
        "gradcam" => {
            let layer_indices: Vec<usize> = layers
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| {
                        CoreError::validation(format!("bad layer index {s:?} in --layers"))
                    })
                })
                .collect::<Result<_, _>>()?;
            RunManifest::new("visualize", &layer_indices, seed, &[checkpoint_path, data_root], out)?
                .write(&out.join("manifest.json"))?;
            let n = n_images.min(dataset.len());
            for sample in &dataset.samples()[..n] {
                let id = format!("s{:03}_i{:04}", sample.subject_index, sample.image_index);
                for &layer in &layer_indices {
                    let map = attention_map(&checkpoint, &sample.image, layer, &id)?;
                    write_heat_overlay_png(
                        &map,
                        &sample.image,
                        &out.join(format!("{id}_layer{layer:02}.png")),
                    )?;
                    write_heat_csv(&map, &out.join(format!("{id}_layer{layer:02}.csv")))?;
                }
            }
            println!("wrote {} overlays to {}", n * layer_indices.len(), out.display());
        }
        other => {
            return Err(CoreError::validation(format!(
                "unknown mode {other:?}; expected \"tsne\" or \"gradcam\""
            )))
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CoreError> {
    if let Some(jobs) = cli.jobs {
        // bounded worker count; ignore failure if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match &cli.command {
        Command::Synth { spec, out, print_config } => cmd_synth(spec, out, *print_config),
        Command::Pretrain { config, resume, print_config } => {
            cmd_pretrain(config, resume.as_deref(), *print_config)
        }
        Command::Calibrate { config, print_config } => cmd_calibrate(config, *print_config),
        Command::Evaluate { config, variant, repeats, print_config } => {
            cmd_evaluate(config, variant, *repeats, *print_config)
        }
        Command::Visualize { checkpoint, data, mode, out, layers, n_images, seed } => {
            cmd_visualize(checkpoint, data, mode, out, layers, *n_images, *seed)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e @ CoreError::Validation(_)) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
