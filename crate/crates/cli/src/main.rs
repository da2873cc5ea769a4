use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod export;
mod pipeline;

use pipeline::Pipeline;

#[derive(Parser)]
#[command(name = "conetomo", version, about = "Cone-beam ROI tomography experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for stochastic steps; overrides the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Recompute outputs that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize the configured phantom.
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Grid side; overrides the configured one.
        #[arg(long)]
        n: Option<usize>,
        /// Ellipsoid list (JSON, unit-ball coordinates) instead of Shepp-Logan.
        #[arg(long)]
        ellipsoids: Option<PathBuf>,
    },
    /// Forward-project the phantom over the configured acquisition.
    Project {
        #[command(flatten)]
        common: Common,
    },
    /// Restrict projections to rays meeting the ROI.
    Truncate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the ROI iteration on truncated data.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct over a list of ROI radii and estimate the critical radius.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Check Tuy's condition for the configured source set.
    Tuy {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize reports and projection masks as CSV and text tables.
    Metrics {
        #[command(flatten)]
        common: Common,
    },
    /// Write mid-plane PNGs and a mid-row profile CSV for a volume.
    Export {
        #[command(flatten)]
        common: Common,
        /// Volume to export (raw file with sidecar); defaults to the reconstruction.
        #[arg(long)]
        volume: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Domain(String),
}

impl From<conetomo::Error> for Failure {
    fn from(e: conetomo::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(format!("io: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Phantom { common, .. }
        | Command::Project { common }
        | Command::Truncate { common }
        | Command::Reconstruct { common }
        | Command::Sweep { common }
        | Command::Tuy { common }
        | Command::Metrics { common }
        | Command::Export { common, .. } => common,
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = common(&cli.command).clone();
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::Domain(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &c.config {
        Some(path) => load_config(path)?,
        None => pipeline::default_config(),
    };
    if let Some(out) = &c.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Command::Phantom { n, ellipsoids, .. } = &cli.command {
        if let Some(n) = n {
            if *n < 8 {
                return Err(Failure::Usage(format!("--n must be at least 8, got {n}")));
            }
            cfg.n = *n;
        }
        if let Some(path) = ellipsoids {
            cfg.phantom = conetomo::config::PhantomSpec::Ellipsoids {
                path: path.clone(),
                radius_fraction: conetomo::config::CUBE_LAYOUT,
            };
        }
    }
    cfg.validate().map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))?;
    std::fs::create_dir_all(&cfg.output)?;
    let p = Pipeline::new(cfg, c.force);
    match cli.command {
        Command::Phantom { .. } => p.phantom().map(|_| ())?,
        Command::Project { .. } => p.projections().map(|_| ())?,
        Command::Truncate { .. } => p.truncated().map(|_| ())?,
        Command::Reconstruct { .. } => p.reconstruct()?,
        Command::Sweep { .. } => p.sweep()?,
        Command::Tuy { .. } => {
            if !p.tuy()? {
                return Err(Failure::Domain("Tuy's condition fails for this source set; see tuy.json".into()));
            }
        }
        Command::Metrics { .. } => p.metrics()?,
        Command::Export { volume, .. } => {
            let path = volume.unwrap_or_else(|| p.path("recon.raw"));
            export_volume(&p, &path)?;
        }
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<conetomo::config::RunConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn export_volume(p: &Pipeline, path: &Path) -> Result<(), Failure> {
    if !path.exists() {
        return Err(Failure::Domain(format!("{} does not exist", path.display())));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("volume").to_string();
    let outputs = export::outputs(&p.dir(), &stem);
    if !p.force() && outputs.iter().all(|o| o.exists()) {
        return Ok(());
    }
    let v = conetomo::VoxelVolume::read_raw(path)?;
    export::write_slices(&v, &p.dir(), &stem)
}
