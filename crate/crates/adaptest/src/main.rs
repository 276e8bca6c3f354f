use std::path::PathBuf;
use std::process::ExitCode;

use adaptest::output::{header, write_all};
use adaptest::{run, AppError, Command, Config};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptest", version, about = "Adaptive epidemic testing: policies, simulation and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides scenario.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicate ensembles.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Noise-free replay of the configured policy.
    Deterministic,
    /// Solve the switching or constant-rate policy and print its schedule.
    Optimize,
    /// Open-loop stochastic ensemble.
    Simulate,
    /// Estimator-controller ensemble.
    ClosedLoop,
    /// Closed-loop cost across baseline serology rates.
    CostSweep,
    /// Identifiability demonstrations.
    Observability,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Deterministic => Command::Deterministic,
            Cmd::Optimize => Command::Optimize,
            Cmd::Simulate => Command::Simulate,
            Cmd::ClosedLoop => Command::ClosedLoop,
            Cmd::CostSweep => Command::CostSweep,
            Cmd::Observability => Command::Observability,
        }
    }
}

fn execute(cli: Cli) -> Result<(), AppError> {
    let path = cli.config.ok_or_else(|| AppError::Usage("--config <path> is required".into()))?;
    let mut sc = Config::load(&path)?.resolve()?;
    if let Some(seed) = cli.seed {
        sc = sc.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        sc.config.output.dir = out.display().to_string();
    }
    if cli.jobs == 0 {
        return Err(AppError::Usage("--jobs must be at least 1".into()));
    }
    let cmd = Command::from(cli.command);
    let outcome = run(cmd, &sc, cli.jobs)?;
    let dir = PathBuf::from(&sc.config.output.dir);
    let paths = write_all(&dir, &outcome.tables, &header(cmd.name(), &sc))?;
    println!("{}", outcome.summary);
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
