use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use adaflow_cli::commands::{self, Sink, SweepCommand};
use adaflow_cli::{CliError, ConfigError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaflow", version, about = "Risk and learning-rate curves of SGD with adaptive step sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or directory for `sweep`; overrides output.path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides run.seed (TOML integers stop at i64::MAX).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic mode ODEs.
    Ode,
    /// Solve the least-squares Volterra equation.
    Volterra,
    /// Simulate streaming SGD (an ensemble summary when run.n_runs > 1).
    Sgd,
    /// Sup-norm gaps between a candidate solver and a deterministic reference.
    Compare,
    /// Closed-form predictions as key=value lines.
    Asymptotics,
    /// Run a command once per value of a config parameter.
    Sweep {
        /// Dotted config path, e.g. `init.star_sq`; overrides sweep.parameter.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values; overrides sweep.values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        /// ode, volterra, sgd or compare; overrides sweep.command.
        #[arg(long = "run")]
        run: Option<String>,
    },
    /// Validate the config and print it back with defaults left implicit.
    Check,
}

fn load(cli: &Cli) -> Result<(String, ExperimentConfig), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if cli.seed.is_some() {
        cfg.run.seed = cli.seed;
    }
    Ok((text, cfg))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (text, cfg) = load(cli)?;
    let note = |msg: &str| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    if let Command::Sweep { param, values, run } = &cli.command {
        let parameter = param
            .clone()
            .or_else(|| cfg.sweep.parameter.clone())
            .ok_or_else(|| ConfigError { problems: vec!["sweep.parameter: required (or pass --param)".into()] })?;
        let values: Vec<toml::Value> = match values {
            Some(v) => v.iter().map(|s| commands::parse_value(s)).collect(),
            None => cfg.sweep.values.clone().unwrap_or_default(),
        };
        let command = SweepCommand::parse(run.as_deref().or(cfg.sweep.command.as_deref()).unwrap_or("ode"))?;
        if values.is_empty() {
            eprintln!("warning: sweep over `{parameter}` has no values; nothing to do");
            return Ok(());
        }
        let dir = cli.out.clone().or_else(|| cfg.output.path.clone()).unwrap_or_else(|| PathBuf::from("sweep"));
        let base: toml::Value = toml::from_str(&text).map_err(|e| ConfigError { problems: vec![e.message().to_string()] })?;
        let index = commands::sweep(&base, &parameter, &values, command, cli.seed, &dir)?;
        note(&format!("wrote {} files and index.csv to {}", index.entries.len(), dir.display()));
        return Ok(());
    }
    let exp = cfg.validate()?;
    let sink = Sink::from_option(cli.out.clone().or_else(|| exp.output.clone()));
    match cli.command {
        Command::Ode => sink.write(&commands::ode(&exp)?)?,
        Command::Volterra => sink.write(&commands::volterra(&exp)?)?,
        Command::Sgd => commands::write_sgd(&exp, &sink)?,
        Command::Compare => sink.write(&commands::compare(&exp)?)?,
        Command::Asymptotics => sink.write(&commands::asymptotics(&exp)?)?,
        Command::Check => sink.write(&cfg.to_toml())?,
        Command::Sweep { .. } => unreachable!(),
    }
    if let Sink::File(p) = &sink {
        note(&format!("wrote {}", p.display()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
