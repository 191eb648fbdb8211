use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coulomb_mpc::dynamics::build_discrete_model;
use coulomb_mpc::sim::{self, ChargeGrid, RunStatus, ScenarioConfig};
use coulomb_mpc::Error;

/// Receding-horizon charge control of collinear Coulomb formations.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed-loop simulation and write a CSV trace.
    Run(Common),
    /// Recompute the realized closed-loop cost of a CSV trace.
    ReplayCost {
        #[command(flatten)]
        common: Common,
        /// Trace written by `run`.
        trace: PathBuf,
    },
    /// Compare the relaxation at the initial state with a brute-force grid
    /// search (at most 3 spacecraft and 2 stages).
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Grid points per charge.
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Grid half-width, units of 10 mC.
        #[arg(long, default_value_t = 0.1)]
        limit: f64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file; the built-in four-spacecraft scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path (overrides the scenario file).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of control steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Prediction horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Cold-start every solve.
    #[arg(long)]
    no_warm_start: bool,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

enum Failure {
    Config(String),
    Runtime(String),
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_file(p).map_err(|e| Failure::Config(e.to_string()))?,
            None => ScenarioConfig::four_craft_reference(),
        };
        if let Some(n) = self.steps {
            cfg.steps = n;
        }
        if let Some(n) = self.horizon {
            cfg.params.horizon = n;
        }
        if self.no_warm_start {
            cfg.solver.warm_start = false;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let log = sim::run_closed_loop(&cfg).map_err(runtime)?;
    if let Some(path) = &cfg.output {
        sim::write_csv(&log, path).map_err(runtime)?;
        println!("wrote {} rows to {}", log.records.len(), path.display());
    }
    let s = log.summary();
    println!("steps:            {}", log.records.len());
    println!("final deviation:  {:.6e} m", s.final_deviation);
    println!("max |charge|:     {:.6e} x 10 mC", s.max_charge);
    println!("saturated steps:  {}", s.saturation_count);
    println!("solver faults:    {}", s.fault_count);
    println!("total solve time: {:.3} s", s.total_solve_time);
    match log.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Aborted(reason) => Err(Failure::Runtime(format!("run aborted: {reason}"))),
    }
}

fn replay_cost(common: &Common, trace: &Path) -> Result<(), Failure> {
    let cfg = common.load()?;
    let rows = sim::read_csv(trace).map_err(|e| Failure::Config(e.to_string()))?;
    let replay = sim::replay_cost(&rows, &cfg.params).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(path) = &cfg.output {
        let mut w = csv::Writer::from_path(path).map_err(|e| runtime(e.into()))?;
        w.write_record(["k", "stage_cost"]).map_err(|e| runtime(e.into()))?;
        for (i, c) in replay.stage_costs.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{c:.16e}")]).map_err(|e| runtime(e.into()))?;
        }
        w.flush().map_err(|e| runtime(e.into()))?;
    }
    println!("rows:       {}", rows.len());
    println!("total cost: {:.16e}", replay.total);
    Ok(())
}

fn oracle(common: &Common, points: usize, limit: f64) -> Result<(), Failure> {
    let cfg = common.load()?;
    let model = build_discrete_model(&cfg.params.xi_des, cfg.sample_period, &cfg.formation)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let grid = ChargeGrid { points, limit };
    let cmp = sim::compare_with_sdr(&cfg.initial_state, &model, &cfg.params, grid, 1e-3).map_err(|e| match e {
        Error::OracleTooLarge(_) => Failure::Config(e.to_string()),
        other => runtime(other),
    })?;
    println!("grid points evaluated:     {} ({} within bounds)", cmp.grid.evaluated, cmp.grid.feasible);
    println!("grid optimum:              {:.12e}", cmp.grid.cost);
    println!("relaxation optimum:        {:.12e}", cmp.sdr_objective);
    println!("rounded-charge cost:       {:.12e}", cmp.rounded_cost);
    println!("relaxation <= grid:        {}", cmp.lower_bound_holds(1e-6));
    for (j, q) in cmp.grid.charges.iter().enumerate() {
        println!("grid charges, stage {j}:    {:?}", q.as_slice());
    }
    for (j, q) in cmp.rounded_charges.iter().enumerate() {
        println!("rounded charges, stage {j}: {:?}", q.as_slice());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => run(c),
        Command::ReplayCost { common, trace } => replay_cost(common, trace),
        Command::Oracle { common, points, limit } => oracle(common, *points, *limit),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
