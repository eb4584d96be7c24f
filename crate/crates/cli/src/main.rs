use clap::{Parser, Subcommand};
use crobust_cli::{parse_config, run, CliError, CliResult, Command, RunOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Cluster-robust variance estimation and small-sample tests.
#[derive(Parser)]
#[command(name = "crobust", version)]
struct Cli {
    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true, env = "CROBUST_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate focal coefficients with robust standard errors and Satterthwaite df.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Report file (default: standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test the configured linear constraints.
    Test {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate rejection rates over a grid of simulated designs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Runs all 648 conditions of the factorial grid.
        #[arg(long)]
        full_grid: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::config(e.kind().to_string());
            let _ = e.print();
            return fail(&err);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.diagnostic());
    ExitCode::from(e.exit_code() as u8)
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("thread count must be positive").at_path("--threads"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()).at_path("--threads"))?;
    }
    let (command, config_path, out, seed, full_grid) = match cli.command {
        Sub::Fit { config, out } => (Command::Fit, config, out, None, false),
        Sub::Test { config, out } => (Command::Test, config, out, None, false),
        Sub::Simulate {
            config,
            out,
            seed,
            full_grid,
        } => (Command::Simulate, config, Some(out), seed, full_grid),
    };
    let document = std::fs::read_to_string(&config_path)
        .map_err(|e| CliError::config(format!("cannot read `{}`: {e}", config_path.display())))?;
    let config = parse_config(&document)?;
    let opts = RunOptions {
        base_dir: config_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        seed,
        full_grid,
    };
    let report = run(command, &config, &opts)?;
    match out {
        Some(path) => std::fs::write(&path, report)
            .map_err(|e| CliError::data(format!("cannot write `{}`: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(report.as_bytes())
            .map_err(|e| CliError::data(format!("cannot write report: {e}"))),
    }
}
