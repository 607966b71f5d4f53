use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stylealign::eval::Method;
use stylealign::objectives::Objective;
use stylealign::Error;
use stylealign_cli::commands;
use stylealign_cli::RunConfig;

/// Stylistic preference alignment on a synthetic captioning world.
#[derive(Debug, Parser)]
#[command(name = "stylealign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: new_yorker, flickr_humor, flickr_romantic or desk.
    #[arg(long)]
    preset: Option<String>,
    /// World synthesis seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Triplets as JSONL; synthesized from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the preference triplets and write them as JSONL.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one captioner with SFT or SimPO.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// sft or simpo; defaults to the config's objective.
        #[arg(long)]
        method: Option<String>,
        /// Output directory for model.json and history.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the binary style classifier.
    TrainClassifier {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for classifier.json and metrics.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint with WR-LogP and Style-Acc.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// zero_shot, sft or simpo (report label).
        #[arg(long)]
        method: String,
        /// Captioner checkpoint; the untrained model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Classifier checkpoint; trained from the config when absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the data-budget sweep.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
        jobs: u64,
        /// Output directory for curve.csv, curve.svg and sweep_config.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render curve.csv and curve.svg from a saved sweep.
    Report {
        /// Sweep output directory to read.
        #[arg(long)]
        from: PathBuf,
        /// Destination directory; defaults to --from.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn usage(message: String) -> Error {
    Error::Config(message)
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    match (&args.config, &args.preset) {
        (Some(path), None) => RunConfig::load(path),
        (None, Some(name)) => RunConfig::preset(name),
        _ => Err(usage("exactly one of --config or --preset is required".into())),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            commands::gen_data(&cfg, config.seed, &out)?;
        }
        Command::Train { data, method, out } => {
            let cfg = load_config(&data.config)?;
            let objective = match method.as_deref() {
                None => cfg.objective.kind,
                Some("sft") => Objective::Sft,
                Some("simpo") => Objective::Simpo,
                Some(other) => return Err(usage(format!("--method must be sft or simpo, got {other:?}"))),
            };
            let (splits, _) = commands::load_splits(&cfg, data.data.as_deref(), data.config.seed)?;
            commands::train_model(&cfg, &splits, objective, &out)?;
        }
        Command::TrainClassifier { data, out } => {
            let cfg = load_config(&data.config)?;
            let (splits, _) = commands::load_splits(&cfg, data.data.as_deref(), data.config.seed)?;
            commands::train_style_classifier(&cfg, &splits, &out)?;
        }
        Command::Eval {
            data,
            method,
            model,
            classifier,
            out,
        } => {
            let method: Method = method.parse().map_err(|e: Error| usage(e.to_string()))?;
            let cfg = load_config(&data.config)?;
            let (splits, _) = commands::load_splits(&cfg, data.data.as_deref(), data.config.seed)?;
            commands::evaluate(&cfg, &splits, method, model.as_deref(), classifier.as_deref(), &out)?;
        }
        Command::Sweep {
            data,
            classifier,
            jobs,
            out,
        } => {
            let cfg = load_config(&data.config)?;
            let (splits, source) = commands::load_splits(&cfg, data.data.as_deref(), data.config.seed)?;
            commands::sweep(&cfg, &splits, source, classifier.as_deref(), jobs as usize, &out)?;
        }
        Command::Report { from, out } => {
            let out = out.unwrap_or_else(|| from.clone());
            commands::report(&from, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STYLEALIGN_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
