//! `iptm`: closed-loop runs, strategy comparisons, sensitivity sweeps and
//! surrogate calibration from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iptm_core::mpc::StrategyKind;
use iptm_core::sim::SweepAxis;

mod commands;
mod config;
mod output;

#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or input files; nothing was run.
    Config(String),
    /// The run itself or writing its artifacts failed.
    Runtime(String),
    /// Artifacts were written but a safety constraint was breached.
    Guard(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
            Self::Guard(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Config(m) | Self::Runtime(m) | Self::Guard(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "iptm", version, about = "Integrated powertrain and thermal management MPC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop simulation and write its artifacts.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// metrics.json of an earlier run; the summary shows signed % deltas.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run several strategies (or configs) on the same cycle and plant.
    Compare {
        /// Repeat to compare explicit configs; with one or none, it is the
        /// base for the strategy set.
        #[arg(short, long)]
        config: Vec<PathBuf>,
        /// Strategy subset, comma separated (default: all six).
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategies: Vec<StrategyKind>,
        /// Run in parallel; solve times are then not comparable.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Vary one parameter over a list of values.
    Sweep {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// weights | horizon | dt2 | np2 | split
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the cooling surrogate coefficients from measured samples.
    Calibrate {
        /// CSV with header p_cp_w,t_c_out_c,t_a_c,v_mps,mdot_c_kgps,q_co_w
        #[arg(long)]
        samples: PathBuf,
        /// Where to write the `[btms]` fragment (default: <output>/calibration/btms_xi.toml).
        #[arg(long)]
        fragment: Option<PathBuf>,
        #[arg(long, env = "IPTM_OUTPUT_ROOT")]
        output: Option<PathBuf>,
    },
}

/// Flags mirroring config keys. They override the config file; `--set`
/// reaches any key and is applied last.
#[derive(Args, Default)]
pub struct Common {
    /// `desk-composite` or a cycle CSV (t_s,v_pv_mps,slope_rad).
    #[arg(long)]
    cycle: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Truncate the cycle (s).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    label: Option<String>,
    /// Output root.
    #[arg(long, env = "IPTM_OUTPUT_ROOT")]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    lambda_p: Option<f64>,
    #[arg(long)]
    lambda_q: Option<f64>,
    #[arg(long)]
    r_t: Option<f64>,
    /// Short-horizon steps.
    #[arg(long)]
    np1: Option<usize>,
    /// Long-horizon steps.
    #[arg(long)]
    np2: Option<usize>,
    #[arg(long)]
    dt1: Option<f64>,
    #[arg(long)]
    dt2: Option<f64>,
    #[arg(long)]
    max_substep: Option<f64>,
    /// Any config key, e.g. `--set battery.q_nom=4.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_assignment)]
    set: Vec<(String, String)>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let f = |x: Option<f64>| x.map(|v| format!("{v:?}"));
        push("cycle", self.cycle.as_ref().map(|c| toml_string(c)));
        push("seed", self.seed.map(|s| s.to_string()));
        push("duration", f(self.duration));
        push("label", self.label.as_ref().map(|l| toml_string(l)));
        push("strategy.kind", self.strategy.map(|k| toml_string(k.name())));
        push("strategy.q", f(self.q));
        push("strategy.r", f(self.r));
        push("strategy.lambda_p", f(self.lambda_p));
        push("strategy.lambda_q", f(self.lambda_q));
        push("strategy.r_t", f(self.r_t));
        push("grid.n_short", self.np1.map(|n| n.to_string()));
        push("grid.n_long", self.np2.map(|n| n.to_string()));
        push("grid.dt_short", f(self.dt1));
        push("grid.dt_long", f(self.dt2));
        push("grid.max_substep", f(self.max_substep));
        out.extend(self.set.iter().cloned());
        out
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: iptm_core::Error| e.to_string())
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: iptm_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, baseline, common } => commands::run(config.as_deref(), baseline.as_deref(), &common),
        Command::Compare { config, strategies, parallel, common } => {
            commands::compare(&config, &strategies, parallel, &common)
        }
        Command::Sweep { config, axis, values, parallel, common } => {
            commands::sweep(config.as_deref(), axis, &values, parallel, &common)
        }
        Command::Calibrate { samples, fragment, output } => {
            commands::calibrate(&samples, fragment.as_deref(), output.as_deref())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
