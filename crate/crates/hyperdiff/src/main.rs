//! hyperdiff: train a spectral-spatial diffusion model on a
//! hyperspectral cube, extract per-pixel diffusion features, classify
//! them with a small vision transformer, and evaluate the result.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hyperdiff::config::RunConfig;
use hyperdiff::error::Error;
use hyperdiff::stages::{
    run_ingest, run_pipeline, run_reconstruct, run_sweep, run_synth, stage_evaluate,
    stage_extract, stage_split, stage_train_classifier, stage_train_diffusion, load_classifier,
    load_dataset, write_manifest, Workspace,
};
use hyperdiff_core::svit::FeatureSource;
use hyperdiff_core::synth::{default_preset, hard_preset};

#[derive(Parser)]
#[command(name = "hyperdiff", version, about = "spectral-spatial diffusion features for hyperspectral classification")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Run configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cube container directory; overrides the config file.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Recompute artifacts even when they already exist.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a CSV (row,col,band,value) or copy a container into the
    /// cube container format.
    Ingest {
        /// Source: a container directory or a CSV file.
        #[arg(long)]
        src: PathBuf,
        /// Optional labels CSV (row,col,label) for CSV sources.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Destination container directory.
        #[arg(long)]
        dst: PathBuf,
    },
    /// Generate a synthetic labeled cube container.
    Synth {
        #[arg(long)]
        dst: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        /// "default" (well separated) or "hard" (overlapping spectra).
        #[arg(long, default_value = "default")]
        preset: String,
        /// Override the preset's signature separation.
        #[arg(long)]
        separation: Option<f32>,
        /// Override the preset's noise sigma.
        #[arg(long)]
        noise: Option<f32>,
    },
    /// Train the diffusion denoiser.
    TrainDiffusion,
    /// Extract per-pixel features from the trained denoiser.
    ExtractFeatures {
        /// Feature source override: raw | diffusion.
        #[arg(long)]
        feature_source: Option<String>,
    },
    /// Train the transformer classifier on extracted features.
    TrainClassifier,
    /// Predict the full map and evaluate on the test split.
    Evaluate,
    /// All stages end to end.
    Pipeline {
        /// Feature source override: raw | diffusion.
        #[arg(long)]
        feature_source: Option<String>,
    },
    /// Classification quality per (timestamp, layer-index) pair.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "5,10,100,200")]
        timestamps: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        layers: Vec<usize>,
    },
    /// Reverse-process reconstruction panels from selected timesteps.
    Reconstruct {
        #[arg(long, value_delimiter = ',', default_value = "400,200,100,80,50,10,5")]
        start_timestamps: Vec<usize>,
    },
}

fn effective_config(global: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(dataset) = &global.dataset {
        cfg.dataset = Some(dataset.clone());
    }
    Ok(cfg)
}

fn workspace(cfg: &RunConfig, force: bool) -> Result<Workspace, Error> {
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (--out or out_dir)".to_string()))?;
    Workspace::new(out, force)
}

fn parse_feature_source(s: &str) -> Result<FeatureSource, Error> {
    match s {
        "raw" => Ok(FeatureSource::Raw),
        "diffusion" => Ok(FeatureSource::Diffusion),
        other => Err(Error::Config(format!(
            "feature source {other:?} must be \"raw\" or \"diffusion\""
        ))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest { src, labels, dst } => run_ingest(&src, labels.as_deref(), &dst),
        Command::Synth {
            dst,
            height,
            width,
            bands,
            classes,
            preset,
            separation,
            noise,
        } => {
            let seed = cli.global.seed.unwrap_or(0);
            let mut params = match preset.as_str() {
                "default" => default_preset(height, width, bands, classes, seed),
                "hard" => hard_preset(height, width, bands, classes, seed),
                other => {
                    return Err(Error::Config(format!(
                        "preset {other:?} must be \"default\" or \"hard\""
                    )))
                }
            };
            if let Some(s) = separation {
                params.separation = s;
            }
            if let Some(n) = noise {
                params.noise_sigma = n;
            }
            run_synth(&params, &dst)
        }
        Command::TrainDiffusion => {
            let cfg = effective_config(&cli.global)?;
            cfg.validate()?;
            let ws = workspace(&cfg, cli.global.force)?;
            write_manifest(&ws, "train-diffusion", &cfg)?;
            let (cube, _labels, _classes) = load_dataset(&cfg)?;
            stage_train_diffusion(&cfg, &ws, &cube)?;
            Ok(())
        }
        Command::ExtractFeatures { feature_source } => {
            let mut cfg = effective_config(&cli.global)?;
            if let Some(fs) = feature_source {
                cfg.svit.feature_source = parse_feature_source(&fs)?;
            }
            cfg.validate()?;
            let ws = workspace(&cfg, cli.global.force)?;
            write_manifest(&ws, "extract-features", &cfg)?;
            let (cube, labels, _classes) = load_dataset(&cfg)?;
            let split = stage_split(&cfg, &ws, &labels)?;
            stage_extract(&cfg, &ws, &cube, &split)?;
            Ok(())
        }
        Command::TrainClassifier => {
            let cfg = effective_config(&cli.global)?;
            cfg.validate()?;
            let ws = workspace(&cfg, cli.global.force)?;
            write_manifest(&ws, "train-classifier", &cfg)?;
            let (cube, labels, _classes) = load_dataset(&cfg)?;
            let split = stage_split(&cfg, &ws, &labels)?;
            let features = stage_extract(&cfg, &ws, &cube, &split)?;
            stage_train_classifier(&cfg, &ws, &features, &labels, &split)?;
            Ok(())
        }
        Command::Evaluate => {
            let cfg = effective_config(&cli.global)?;
            cfg.validate()?;
            let ws = workspace(&cfg, cli.global.force)?;
            write_manifest(&ws, "evaluate", &cfg)?;
            let (cube, labels, classes) = load_dataset(&cfg)?;
            let split = stage_split(&cfg, &ws, &labels)?;
            let features = stage_extract(&cfg, &ws, &cube, &split)?;
            let model = load_classifier(&ws)?;
            let report = stage_evaluate(&ws, &model, &features, &labels, &split, classes.as_ref())?;
            print!(
                "{}",
                hyperdiff::report::format_report_table(&report, classes.as_ref())
            );
            Ok(())
        }
        Command::Pipeline { feature_source } => {
            let mut cfg = effective_config(&cli.global)?;
            if let Some(fs) = feature_source {
                cfg.svit.feature_source = parse_feature_source(&fs)?;
            }
            let ws = workspace(&cfg, cli.global.force)?;
            let report = run_pipeline(&cfg, &ws)?;
            println!(
                "pipeline: OA {:.4} AA {:.4} kappa {:.4}",
                report.oa, report.aa, report.kappa
            );
            Ok(())
        }
        Command::Sweep { timestamps, layers } => {
            let cfg = effective_config(&cli.global)?;
            let ws = workspace(&cfg, cli.global.force)?;
            let rows = run_sweep(&cfg, &ws, &timestamps, &layers)?;
            for r in rows {
                println!(
                    "t={} layer={} OA={:.4} AA={:.4} kappa={:.4}",
                    r.timestamp, r.layer_index, r.oa, r.aa, r.kappa
                );
            }
            Ok(())
        }
        Command::Reconstruct { start_timestamps } => {
            let cfg = effective_config(&cli.global)?;
            let ws = workspace(&cfg, cli.global.force)?;
            run_reconstruct(&cfg, &ws, &start_timestamps)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
