use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pupilkit::config::RunConfig;
use pupilkit::error::{Error, Result};
use pupilkit::pipeline::{self as pl, Ctx};

/// Luminosity-corrected pupillometry pipeline.
#[derive(Parser)]
#[command(name = "pupilkit", version)]
struct Cli {
    /// Run configuration (TOML). Without it, defaults relative to the working directory.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the available hardware parallelism.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the luminance lookup table for the configured display.
    BuildLut,
    /// Fit each participant's light-response model from calibration samples.
    Calibrate,
    /// Split traces into light-driven and arousal-driven parts.
    Decouple,
    /// Derive clip valence/arousal labels from ratings.
    Labels,
    /// Leave-one-participant-out evaluation of the linear arousal model.
    FitAdm,
    /// Nested leave-one-participant-out evaluation of the boosted model.
    FitGbt,
    /// Every stage from calibration to both model evaluations.
    Evaluate,
    /// Generate a synthetic study with known ground truth.
    Synth,
    /// Plot-ready long-format tables from fitted-model outputs.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::BuildLut => "build-lut",
            Command::Calibrate => "calibrate",
            Command::Decouple => "decouple",
            Command::Labels => "labels",
            Command::FitAdm => "fit-adm",
            Command::FitGbt => "fit-gbt",
            Command::Evaluate => "evaluate",
            Command::Synth => "synth",
            Command::Report => "report",
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::defaults_at(&std::env::current_dir().map_err(|e| Error::io(".", e))?)?,
    };
    let mut ctx = Ctx::new(&cfg, cli.command.name());
    match cli.command {
        Command::BuildLut => {
            pl::build_lut(&mut ctx)?;
        }
        Command::Calibrate => {
            let lut = pl::load_lut(&ctx)?;
            pl::calibrate(&mut ctx, &lut)?;
        }
        Command::Decouple => {
            let lut = pl::load_lut(&ctx)?;
            let models = pl::load_models(&ctx)?;
            pl::decouple(&mut ctx, &lut, &models)?;
        }
        Command::Labels => {
            pl::labels(&mut ctx)?;
        }
        Command::FitAdm => {
            let labels = pl::load_labels(&ctx)?;
            let data = pl::study_dataset(&pl::load_summaries(&ctx)?, &labels)?;
            let adm = pl::fit_adm(&mut ctx, &data)?;
            pl::metrics_file(&mut ctx, &adm, None);
        }
        Command::FitGbt => {
            let labels = pl::load_labels(&ctx)?;
            let rows = pl::feature_rows(&pl::load_features(&ctx)?, &labels)?;
            pl::fit_gbt(&mut ctx, &rows)?;
        }
        Command::Evaluate => {
            pl::evaluate(&mut ctx)?;
        }
        Command::Synth => {
            pl::synth(&mut ctx)?;
        }
        Command::Report => pl::report(&mut ctx)?,
    }
    ctx.commit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error: kind={} code={} message=\"{msg}\"", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
