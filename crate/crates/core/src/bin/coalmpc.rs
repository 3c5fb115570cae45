use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coalmpc::coalition::{CoopCostConfig, CoopCostKind};
use coalmpc::scenario::{build_scenario, emit_outputs, load_scenario, write_scenario, ScenarioSpec};
use coalmpc::sim::{run, Mode, SimConfig};
use coalmpc::Error;

#[derive(Parser)]
#[command(name = "coalmpc", version, about = "Coalitional MPC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trajectories, timeline and costs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "coo")]
        mode: ModeArg,
        #[arg(long = "coop-cost", value_enum, default_value = "b")]
        coop_cost: CoopArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long = "neg-period")]
        neg_period: Option<usize>,
        /// Coalition lifetime in steps, or `inf`.
        #[arg(long, value_parser = parse_lifetime)]
        lifetime: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the storage-grid benchmark scenario.
    Grid {
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cen,
    Dec,
    Coo,
    Cir,
}

#[derive(Clone, Copy, ValueEnum)]
enum CoopArg {
    A,
    B,
}

fn parse_lifetime(s: &str) -> Result<usize, String> {
    match s {
        "inf" | "never" => Ok(usize::MAX),
        _ => s.parse().map_err(|e| format!("{e}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_solver_failure() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Grid { rows, cols, out } => {
            let spec = ScenarioSpec::benchmark(rows, cols);
            build_scenario(&spec)?;
            write_scenario(&spec, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Run {
            scenario,
            mode,
            coop_cost,
            steps,
            horizon,
            neg_period,
            lifetime,
            out,
        } => {
            let spec = load_scenario(&scenario)?;
            let sc = build_scenario(&spec)?;
            let mut cfg = SimConfig::with_mode(match mode {
                ModeArg::Cen => Mode::Cen,
                ModeArg::Dec => Mode::Dec,
                ModeArg::Coo => Mode::Coo,
                ModeArg::Cir => Mode::Cir,
            });
            cfg.coop = CoopCostConfig::new(match coop_cost {
                CoopArg::A => CoopCostKind::Members,
                CoopArg::B => CoopCostKind::Links,
            });
            if let Some(v) = steps {
                cfg.steps = v;
            }
            if let Some(v) = horizon {
                cfg.mpc.horizon = v;
            }
            if let Some(v) = neg_period {
                cfg.neg_period = v;
            }
            if let Some(v) = lifetime {
                cfg.lifetime = v;
            }
            if let Ok(tol) = std::env::var("COALMPC_TOL") {
                cfg.mpc.qp.tolerance = tol
                    .parse()
                    .map_err(|_| Error::Config(format!("COALMPC_TOL is not a number: {tol}")))?;
            }
            let result = run(&sc.network, &sc.x0, &cfg)?;
            let files = emit_outputs(&sc.network, &result, &out)?;
            println!(
                "{} control cost {:.6e}, total {:.6e}, {} coalition events -> {}",
                result.mode,
                result.accumulated_control_cost,
                result.accumulated_total_cost,
                result.events.len(),
                files.costs.parent().unwrap_or(&out).display()
            );
        }
    }
    Ok(())
}
