use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shadowflow_cli::config::{ExperimentConfig, ExperimentKind, Overrides, Scale, TargetKind};
use shadowflow_cli::plot::{emit_plot, PlotSpec};
use shadowflow_cli::{init_threads, run_and_write, CliError, Manifest};

#[derive(Parser)]
#[command(
    name = "shadowflow",
    version,
    about = "Finite-precision MixFlow experiments and shadowing diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (orbit-error, delta, shadow-window, sampling-error,
    /// density-error, elbo-curve, inversion-check, oracle-check).
    #[command(flatten)]
    Run(RunCommand),
    /// Re-run an experiment from a manifest written by an earlier run.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a result CSV as an SVG line plot.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        title: Option<String>,
    },
}

#[derive(Subcommand)]
enum RunCommand {
    OrbitError(RunArgs),
    Delta(RunArgs),
    ShadowWindow(RunArgs),
    SamplingError(RunArgs),
    DensityError(RunArgs),
    ElboCurve(RunArgs),
    InversionCheck(RunArgs),
    OracleCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target when no config is given.
    #[arg(long, default_value = "banana")]
    target: String,
    /// Full-size grids: longer flows, 100 seeds, 2048 bits.
    #[arg(long = "full-scale", alias = "paper-scale")]
    full_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    precision_bits: Option<u32>,
}

impl RunCommand {
    fn split(self) -> (ExperimentKind, RunArgs) {
        use ExperimentKind as E;
        match self {
            RunCommand::OrbitError(a) => (E::OrbitError, a),
            RunCommand::Delta(a) => (E::Delta, a),
            RunCommand::ShadowWindow(a) => (E::ShadowWindow, a),
            RunCommand::SamplingError(a) => (E::SamplingError, a),
            RunCommand::DensityError(a) => (E::DensityError, a),
            RunCommand::ElboCurve(a) => (E::ElboCurve, a),
            RunCommand::InversionCheck(a) => (E::InversionCheck, a),
            RunCommand::OracleCheck(a) => (E::OracleCheck, a),
        }
    }
}

fn parse_target(s: &str) -> Result<TargetKind, CliError> {
    toml::Value::String(s.to_string())
        .try_into()
        .map_err(|_| CliError::Config(format!("unknown target {s:?}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(cmd) => {
            let (kind, args) = cmd.split();
            let cfg = match &args.config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(path)?;
                    if cfg.experiment != kind {
                        return Err(CliError::Config(format!(
                            "{} declares experiment {}, not {kind}",
                            path.display(),
                            cfg.experiment
                        )));
                    }
                    cfg
                }
                None => ExperimentConfig::new(kind, parse_target(&args.target)?),
            };
            let scale = if args.full_scale { Scale::Full } else { Scale::Reduced };
            let ov = Overrides {
                seed: args.seed,
                precision_bits: args.precision_bits,
                output_dir: args.out,
            };
            report(run_and_write(&cfg.resolve(scale, &ov)?)?);
        }
        Command::Rerun { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let ov = Overrides {
                output_dir: out,
                ..Overrides::default()
            };
            report(run_and_write(&m.config.resolve(Scale::Reduced, &ov)?)?);
        }
        Command::Plot {
            csv,
            out,
            log_x,
            log_y,
            title,
        } => {
            emit_plot(&csv, &out, &PlotSpec { log_x, log_y, title })?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn report(out: shadowflow_cli::RunOutput) {
    println!(
        "wrote {} ({} rows) and {}",
        out.csv_path.display(),
        out.table.rows.len(),
        out.manifest_path.display()
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
