use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use octa3d::pipeline::{self, EvalDomain, PipelineConfig, RunReport};
use octa3d::Error;

#[derive(Parser, Debug)]
#[command(name = "octa3d", version, about = "Vessel depth estimation and 3D reconstruction")]
struct Cli {
    /// JSON pipeline configuration; defaults to the toy configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Phantom {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the network on a phantom dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Predict depth and vessel maps for one angiogram.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        angio: PathBuf,
        #[arg(long)]
        stem: Option<String>,
    },
    /// Build the vessel graph, centreline cloud and tube mesh.
    Reconstruct {
        #[arg(long)]
        seg: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long, default_value = "recon")]
        stem: String,
    },
    /// Depth metrics of a predicted map against ground truth.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Evaluate every pixel with positive ground truth, ignoring --mask.
        #[arg(long)]
        full_image: bool,
    },
    /// Chamfer and Hausdorff distances between two PLY point clouds.
    EvalRecon {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingInput(_) => 3,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        Error::CheckpointMismatch(_) => 4,
        Error::UndefinedMetric(_) => 5,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> octa3d::Result<(PipelineConfig, String)> {
    let (mut cfg, hash) = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => (PipelineConfig::default(), PipelineConfig::default_hash()),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    match &cli.command {
        Command::Phantom { n: Some(n) } => cfg.dataset.n = *n,
        Command::Train { steps: Some(s), .. } => cfg.train.steps = *s,
        _ => {}
    }
    cfg.validate()?;
    Ok((cfg, hash))
}

fn run(cli: &Cli) -> octa3d::Result<RunReport> {
    let (cfg, hash) = load_config(cli)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Phantom { .. } => pipeline::cmd_phantom(&cfg, &hash, out),
        Command::Train { data, .. } => pipeline::cmd_train(&cfg, &hash, data, out),
        Command::Predict { checkpoint, angio, stem } => {
            let stem = stem.clone().unwrap_or_else(|| pipeline::default_stem(angio));
            pipeline::cmd_predict(&cfg, &hash, checkpoint, angio, out, &stem)
        }
        Command::Reconstruct { seg, depth, stem } => pipeline::cmd_reconstruct(&cfg, &hash, seg, depth, out, stem),
        Command::EvalDepth {
            pred,
            gt,
            mask,
            full_image,
        } => {
            let domain = if *full_image { EvalDomain::FullImage } else { EvalDomain::Vessel };
            pipeline::cmd_eval_depth(&cfg, &hash, pred, gt, mask.as_deref(), domain, out)
        }
        Command::EvalRecon { pred, gt } => pipeline::cmd_eval_recon(&cfg, &hash, pred, gt, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report.metrics).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
