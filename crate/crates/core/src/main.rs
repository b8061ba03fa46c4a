use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spde_ergo::commands::{
    cmd_convolution, cmd_ergodic, cmd_lyapunov, cmd_selftest, cmd_simulate, exit_code, CommandOutcome, SeedSource,
    EXIT_VALIDATION,
};
use spde_ergo::config::{parse_config, RunConfig, SEED_ENV};
use spde_ergo::output::OutputDir;
use spde_ergo::selftest::SelftestOptions;
use spde_ergo::Result;

/// Drift-implicit Euler Galerkin experiments for 1D SPDEs with
/// multiplicative space-time white noise.
#[derive(Parser)]
#[command(name = "spde-ergo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time averages of the test functionals from every initial datum.
    Ergodic(RunArgs),
    /// Second moments of the chain against the Lyapunov bound.
    Lyapunov(RunArgs),
    /// Sobolev moments of the discrete stochastic convolution over N and beta.
    Convolution(RunArgs),
    /// One trajectory with its random-PDE residuals.
    Simulate(RunArgs),
    /// Fast invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; defaults to the 200-path desk preset.
    #[arg(long, conflicts_with = "paper")]
    config: Option<PathBuf>,
    /// Use the full 1000-path preset.
    #[arg(long)]
    paper: bool,
    /// Output directory; overrides output.directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    /// Scales the analysis quadrature weight (1 leaves it exact).
    #[arg(long, default_value_t = 1.0)]
    analyze_weight_scale: f64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

type Runner = fn(&RunConfig, &OutputDir, &SeedSource) -> Result<CommandOutcome>;

fn load(args: &RunArgs) -> Result<(RunConfig, SeedSource)> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::preset(args.paper),
    };
    let env = std::env::var(SEED_ENV).ok();
    let source = if cfg.apply_seed_override(env.as_deref())? {
        SeedSource::Env
    } else {
        SeedSource::Config
    };
    Ok((cfg, source))
}

fn run(name: &str, args: &RunArgs, runner: Runner) -> Result<CommandOutcome> {
    let (cfg, source) = load(args)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(name));
    let out = OutputDir::create(&dir)?;
    log::info!("{name}: {} paths x {} steps, seed {}", cfg.run.paths, cfg.run.steps, cfg.run.seed);
    runner(&cfg, &out, &source)
}

fn finish(result: Result<CommandOutcome>) -> ExitCode {
    match result {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            println!("verdict: {}", if outcome.verdict { "pass" } else { "FAIL" });
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ergodic(a) => finish(run("ergodic", &a, cmd_ergodic)),
        Command::Lyapunov(a) => finish(run("lyapunov", &a, cmd_lyapunov)),
        Command::Convolution(a) => finish(run("convolution", &a, cmd_convolution)),
        Command::Simulate(a) => finish(run("simulate", &a, cmd_simulate)),
        Command::Selftest(a) => {
            let opts = SelftestOptions {
                epsilon: a.epsilon,
                tau: a.tau,
                analyze_weight_scale: a.analyze_weight_scale,
                ..SelftestOptions::default()
            };
            let (report, outcome) = cmd_selftest(&opts);
            if a.json {
                match serde_json::to_string_pretty(&report) {
                    Ok(s) => println!("{s}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_VALIDATION as u8);
                    }
                }
                return ExitCode::from(outcome.exit_code() as u8);
            }
            finish(Ok(outcome))
        }
    }
}
