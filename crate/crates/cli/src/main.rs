mod checks;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcomimo_core::sim::{self, compare, convergence, run_to_dir, write_comparison};
use pcomimo_core::{Error, RunConfig, Scheme};

use checks::Case;

#[derive(Parser)]
#[command(
    name = "pcomimo",
    version,
    about = "Delay-aware Pco-MIMO control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scheme and write metrics.csv (plus the learner snapshot)
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare schemes over consecutive seeds; prints CSV on stdout
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        schemes: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Exact checks on tiny instances
    OracleCheck {
        /// Run a single case instead of all of them
        #[arg(long, value_enum)]
        case: Option<Case>,
    },
    /// Learner trajectory CSV of the proposed scheme on stdout
    Convergence {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the default configuration
    Defaults,
}

enum Failure {
    Config(String),
    Oracle,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    // an unreadable config file is a config error too
    RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } | Error::Config(_) => Failure::Config(e.to_string()),
        other => other.into(),
    })
}

fn execute(command: Command) -> Result<(), Failure> {
    let stdout = io::stdout();
    let io_failure = |e: io::Error| Failure::Other(e.to_string());
    match command {
        Command::Run {
            config,
            seed,
            frames,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(seed) = seed {
                cfg.sim.seed = seed;
            }
            if let Some(frames) = frames {
                cfg.sim.frames = frames;
                cfg.sim.burn_in = cfg.sim.burn_in.min(frames);
            }
            let output = run_to_dir(&cfg, &out)?;
            eprintln!(
                "{} over {} frames: mean delay {:.4} s, wrote {}",
                cfg.sim.scheme,
                output.log.frames,
                output.log.mean_delay_s(),
                out.join(sim::METRICS_FILE).display()
            );
        }
        Command::Compare {
            config,
            schemes,
            seeds,
        } => {
            let cfg = load(&config)?;
            let schemes = schemes
                .iter()
                .map(|s| s.parse::<Scheme>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Config(e.to_string()))?;
            let rows = compare(&cfg, &schemes, seeds)?;
            write_comparison(&rows, stdout.lock()).map_err(io_failure)?;
        }
        Command::OracleCheck { case } => {
            let cases = case.map_or(Case::ALL.to_vec(), |c| vec![c]);
            let mut all_passed = true;
            for case in cases {
                let outcome = checks::run(case)?;
                all_passed &= outcome.passed;
                let verdict = if outcome.passed { "PASS" } else { "FAIL" };
                writeln!(
                    stdout.lock(),
                    "{verdict} {}: {}",
                    case.name(),
                    outcome.detail
                )
                .map_err(io_failure)?;
            }
            if !all_passed {
                return Err(Failure::Oracle);
            }
        }
        Command::Convergence { config } => {
            let cfg = load(&config)?;
            convergence(&cfg, stdout.lock())?;
        }
        Command::Defaults => {
            write!(stdout.lock(), "{}", RunConfig::default().to_toml_string())
                .map_err(io_failure)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Oracle) => ExitCode::from(3),
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
