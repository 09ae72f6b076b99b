use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dcopt_cli::{run, sweep, validate, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dcopt", version, about = "Distributed coupled optimization experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, env = "DCOPT_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, env = "DCOPT_OUT")]
    out: Option<PathBuf>,
    /// Number of rounds K, overriding `run.rounds`.
    #[arg(long, global = true, env = "DCOPT_ROUNDS")]
    rounds: Option<usize>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "DCOPT_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reference, simulate and write the trace.
    Run,
    /// Check the standing assumptions and report L and the automatic step sizes.
    Validate,
    /// Repeat the run over a list of values of one parameter.
    Sweep {
        /// rho, gamma, K, n_cycles or inner_tol.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        /// Read rho values as multiples of 1/(2L) and gamma values as multiples of 1/rho.
        #[arg(long)]
        relative: bool,
    },
}

fn load(cli: &Cli) -> dcopt_cli::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config", "no config file given"))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    if let Some(k) = cli.rounds {
        config.run.rounds = k;
    }
    config.check()?;
    Ok(config)
}

fn dispatch(cli: &Cli) -> dcopt_cli::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::config("--threads", e.to_string()))?;
    }
    let config = load(cli)?;
    match &cli.command {
        Command::Run => run::cmd_run(&config),
        Command::Validate => validate::cmd_validate(&config, cli.out.as_deref()),
        Command::Sweep {
            param,
            values,
            relative,
        } => sweep::cmd_sweep(&config, param, values, *relative, &config.output.dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
