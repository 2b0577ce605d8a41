use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcgrf_cli::{cmd_compare, cmd_drift, cmd_eval, cmd_sweep, cmd_synth, cmd_train, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "rcgrf", version, about = "Train and evaluate consistency-regularized recurrent classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` override; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to <out>/data.csv.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model and evaluate it on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV; synthesized from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train once per value in `lambda_grid` and keep the best.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// LSTM vs GRU vs RC-GRU over `n_seeds` seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Per-sequence hidden-state drift of a saved model.
    Drift {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common } => {
            let path = cmd_synth(&load_config(&common)?, &common.out)?;
            println!("wrote {}", path.display());
        }
        Command::Train { common, data } => {
            let o = cmd_train(&load_config(&common)?, data.as_deref(), &common.out)?;
            print!("best_epoch = {}\n{}", o.log.best_epoch, o.metrics.to_text());
        }
        Command::Sweep { common, data } => {
            let o = cmd_sweep(&load_config(&common)?, data.as_deref(), &common.out)?;
            print!("selected_lambda = {}\n{}", o.sweep.best().lambda, o.metrics.to_text());
        }
        Command::Compare { common, data } => {
            cmd_compare(&load_config(&common)?, data.as_deref(), &common.out)?;
            let table = std::fs::read_to_string(common.out.join("compare.txt"))
                .map_err(|e| rcgrf::Error::io(common.out.join("compare.txt"), e))?;
            print!("{table}");
        }
        Command::Drift { common, model, data } => {
            let o = cmd_drift(&load_config(&common)?, &model, data.as_deref(), &common.out)?;
            print!("{}", o.summary.to_text());
        }
        Command::Eval { common, model, data } => {
            let m = cmd_eval(&load_config(&common)?, &model, data.as_deref(), &common.out)?;
            print!("{}", m.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).render());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::FAILURE
        }
    }
}
