//! `stereo-offset`: synthesize study data, fit and train the offset-time
//! model, evaluate it, and run the game and HUD applications.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FileConfig;
use stereo_offset::model::Optimizer;

#[derive(Parser, Debug)]
#[command(
    name = "stereo-offset",
    version,
    about = "Stereo gaze offset-time model"
)]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML or JSON file with default values for the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a trial table from planted offset distributions.
    Synth(SynthArgs),
    /// Fit an ExGauss distribution to every condition of a trial table.
    Fit(TableArgs),
    /// Train the interpolating model on a trial table.
    Train(TrainArgs),
    /// Predict the offset distribution for one displacement.
    Predict(PredictArgs),
    /// Per-condition KL divergence and KS test of a model on a trial table.
    Eval(EvalArgs),
    /// Compare the full model with saccade-only and vergence-only models.
    Ablate(AblateArgs),
    /// Mean gaze offset time for a game's fixation distribution.
    Game(GameArgs),
    /// Optimize head-up display depth for a scene.
    Hud(HudArgs),
    /// Pool depth maps into a scene depth histogram.
    DepthHist(DepthHistArgs),
    /// Convert an external trial table into this tool's schema.
    Import(ImportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    subjects: Option<u32>,
    /// Accepted trials per condition and subject.
    #[arg(long)]
    trials: Option<usize>,
    /// Tracker noise, degrees (per-sample standard deviation).
    #[arg(long)]
    noise_deg: Option<f64>,
    /// Plant the distributions of a trained model instead of the built-in surface.
    #[arg(long)]
    surface_model: Option<PathBuf>,
    /// Also write every accepted raw trace.
    #[arg(long)]
    traces: bool,
}

#[derive(Args, Debug)]
struct TableArgs {
    /// Trial table CSV.
    #[arg(long)]
    trials: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Vergence change, degrees (positive converges).
    #[arg(long, allow_hyphen_values = true)]
    dv: f64,
    /// Saccade amplitude, degrees.
    #[arg(long, allow_hyphen_values = true)]
    ds: f64,
    /// Allow displacements outside the training domain.
    #[arg(long)]
    extrapolate: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    trials: PathBuf,
    /// Histogram bin count.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    trials: PathBuf,
    /// Use this trained model as FULL instead of training one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Histogram bin counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Depth,
    Vergence,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Adam,
    Gradient,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Gradient => Optimizer::Gradient,
        }
    }
}

#[derive(Args, Debug)]
struct GameArgs {
    #[arg(long)]
    model: PathBuf,
    /// Fixation histogram CSV (bin_center, mass).
    #[arg(long)]
    fixations: PathBuf,
    /// Whether bin centers are depths in meters or vergence in degrees.
    #[arg(long, value_enum, default_value = "depth")]
    domain: DomainArg,
    #[arg(long)]
    ipd_mm: Option<f64>,
}

#[derive(Args, Debug)]
struct HudArgs {
    #[arg(long)]
    model: PathBuf,
    /// Scene depth histogram CSV (bin_center in meters, mass).
    #[arg(
        long,
        conflicts_with = "depth_manifest",
        required_unless_present = "depth_manifest"
    )]
    scene: Option<PathBuf>,
    /// Depth-map manifest JSON; the maps are pooled into the scene histogram.
    #[arg(long)]
    depth_manifest: Option<PathBuf>,
    #[arg(long)]
    ipd_mm: Option<f64>,
}

#[derive(Args, Debug)]
struct DepthHistArgs {
    /// Manifest JSON: width, height, scale_to_m, frames (paths relative to it).
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct ImportArgs {
    /// External trial table CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "dv_deg")]
    dv_col: String,
    #[arg(long, default_value = "ds_deg")]
    ds_col: String,
    #[arg(long, default_value = "offset_s")]
    offset_col: String,
    #[arg(long)]
    subject_col: Option<String>,
    #[arg(long)]
    trial_col: Option<String>,
    /// Column holding a true/false or 1/0 acceptance flag.
    #[arg(long)]
    accepted_col: Option<String>,
    /// Units of the offset column.
    #[arg(long, value_enum, default_value = "s")]
    offset_unit: OffsetUnit,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OffsetUnit {
    S,
    Ms,
}

fn flags(cli: &Cli) -> FileConfig {
    let mut f = FileConfig {
        seed: cli.seed,
        ..Default::default()
    };
    match &cli.command {
        Command::Synth(a) => {
            f.subjects = a.subjects;
            f.trials = a.trials;
            f.noise_deg = a.noise_deg;
        }
        Command::Train(a) => {
            f.lr = a.lr;
            f.iters = a.iters;
            f.optimizer = a.optimizer.map(Into::into);
        }
        Command::Eval(a) => f.bins = a.bins.map(|b| vec![b]),
        Command::Ablate(a) => {
            f.bins = a.bins.clone();
            f.lr = a.lr;
            f.iters = a.iters;
        }
        Command::Game(a) => f.ipd_mm = a.ipd_mm,
        Command::Hud(a) => f.ipd_mm = a.ipd_mm,
        _ => {}
    }
    f
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = config::RunConfig::from(file.overridden_by(flags(&cli)));
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, out, a.surface_model.as_deref(), a.traces),
        Command::Fit(a) => commands::fit(&cfg, out, &a.trials),
        Command::Train(a) => commands::train(&cfg, out, &a.trials),
        Command::Predict(a) => commands::predict(out, &a.model, a.dv, a.ds, a.extrapolate),
        Command::Eval(a) => commands::eval(&cfg, out, &a.model, &a.trials),
        Command::Ablate(a) => commands::ablate(&cfg, out, &a.trials, a.model.as_deref()),
        Command::Game(a) => {
            let vergence = matches!(a.domain, DomainArg::Vergence);
            commands::game(&cfg, out, &a.model, &a.fixations, vergence)
        }
        Command::Hud(a) => commands::hud(
            &cfg,
            out,
            &a.model,
            a.scene.as_deref(),
            a.depth_manifest.as_deref(),
        ),
        Command::DepthHist(a) => commands::depth_hist(out, &a.manifest),
        Command::Import(a) => {
            let map = commands::ColumnMap {
                dv: a.dv_col,
                ds: a.ds_col,
                offset: a.offset_col,
                subject: a.subject_col,
                trial: a.trial_col,
                accepted: a.accepted_col,
                offset_scale: match a.offset_unit {
                    OffsetUnit::S => 1.0,
                    OffsetUnit::Ms => 1e-3,
                },
            };
            commands::import(out, &a.input, &map)
        }
    }
}

/// 3 for numerical failures inside the model, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<stereo_offset::Error>())
        .any(stereo_offset::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
