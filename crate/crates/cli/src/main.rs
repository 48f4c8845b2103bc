use std::path::PathBuf;
use std::process::ExitCode;

use brwre_cli::{invoke, ExperimentId, Invocation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brwre", version, about = "Branching random walks in random environment: simulation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, value_name = "DIR")]
    out: Option<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Print the resolved config, defaults included, and exit.
    #[arg(long)]
    describe: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Raw W_n(t) trajectories.
    Simulate(Common),
    /// Critical interval, rates and region flags.
    Rates(Common),
    /// Spinal identities under the size-biased measure.
    SpineCheck(Common),
    /// Mean of W_n(t) against 1.
    Martingale(Common),
    /// Quenched Lp convergence rate.
    LpRate(Common),
    /// Annealed Lp boundedness dichotomy.
    AnnealedLp(Common),
    /// Uniform convergence on a compact interval.
    Uniform(Common),
    /// Scaled quenched cumulants.
    MdpQuenched(Common),
    /// Scaled annealed cumulants.
    MdpAnnealed(Common),
    /// Moderate deviations of the empirical measure.
    MdpPopulation(Common),
    /// Recursion inequality for annealed moments.
    UCheck(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (id, common) = match cli.command {
        Command::Simulate(c) => (ExperimentId::Simulate, c),
        Command::Rates(c) => (ExperimentId::Rates, c),
        Command::SpineCheck(c) => (ExperimentId::SpineCheck, c),
        Command::Martingale(c) => (ExperimentId::Martingale, c),
        Command::LpRate(c) => (ExperimentId::LpRate, c),
        Command::AnnealedLp(c) => (ExperimentId::AnnealedLp, c),
        Command::Uniform(c) => (ExperimentId::Uniform, c),
        Command::MdpQuenched(c) => (ExperimentId::MdpQuenched, c),
        Command::MdpAnnealed(c) => (ExperimentId::MdpAnnealed, c),
        Command::MdpPopulation(c) => (ExperimentId::MdpPopulation, c),
        Command::UCheck(c) => (ExperimentId::UCheck, c),
    };
    let inv = Invocation {
        experiment: Some(id),
        config_path: common.config,
        seed: common.seed,
        out: common.out,
        threads: common.threads,
        describe: common.describe,
    };
    let code = invoke(&inv, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
