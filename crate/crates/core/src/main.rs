use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shardcalc::commands::{self, ComposeFlags, Globals, InputError, Outcome, PlanFlags, SimulateFlags};
use shardcalc::report::Units;
use shardcalc::sim::Fault;

/// Memory and communication costs of sharded training placements.
#[derive(Parser)]
#[command(name = "shardcalc", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the JSON envelope instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for simulated data and initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Show GiB/MiB instead of GB/MB (values are unchanged).
    #[arg(long, global = true)]
    binary_units: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-device memory and per-step communication of the configured spec.
    Derive,
    /// Pick a strategy from model size, device memory and interconnect.
    Plan {
        #[arg(long)]
        model_state_threshold: Option<f64>,
        #[arg(long)]
        layer_threshold: Option<f64>,
    },
    /// Build and check a TP × PP × DP device grid.
    Compose {
        #[arg(long)]
        tp: Option<u64>,
        #[arg(long)]
        pp: Option<u64>,
        #[arg(long)]
        dp: Option<u64>,
    },
    /// Run the configured spec on simulated devices and check it against a
    /// single-device run.
    Simulate {
        #[arg(long)]
        steps: Option<usize>,
        /// One of missing-sample, duplicate-sample, wrong-normalization,
        /// stale-params, precision-mismatch, reduction-order.
        #[arg(long, value_parser = parse_fault)]
        inject: Option<Fault>,
    },
    /// Recompute the 70B reference numbers and compare them exactly.
    ValidatePaper {
        #[arg(long, default_value_t = 8)]
        devices: u64,
    },
    /// List the catalogued strategies as placement tuples.
    Catalog,
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { commands::EXIT_INPUT } else { commands::EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        units: Units {
            binary: cli.binary_units,
        },
    };
    let (name, result): (&str, Result<Outcome, InputError>) = match cli.command {
        Command::Derive => ("derive", commands::derive(&globals)),
        Command::Plan {
            model_state_threshold,
            layer_threshold,
        } => (
            "plan",
            commands::plan(
                &globals,
                PlanFlags {
                    model_state_threshold,
                    layer_threshold,
                },
            ),
        ),
        Command::Compose { tp, pp, dp } => {
            ("compose", commands::compose_cmd(&globals, ComposeFlags { tp, pp, dp }))
        }
        Command::Simulate { steps, inject } => (
            "simulate",
            commands::simulate(&globals, &SimulateFlags { steps, inject }),
        ),
        Command::ValidatePaper { devices } => {
            ("validate-paper", commands::validate_paper(&globals, devices))
        }
        Command::Catalog => ("catalog", Ok(commands::catalog_cmd(&globals))),
    };
    let outcome = result.unwrap_or_else(|e| commands::input_error(name, &globals, &e));
    // a closed pipe (e.g. `| head`) is not worth a panic
    let _ = if cli.json {
        let text = serde_json::to_string_pretty(&outcome.envelope).expect("envelope serializes");
        writeln!(std::io::stdout().lock(), "{text}")
    } else if outcome.exit_code == commands::EXIT_INPUT {
        write!(std::io::stderr().lock(), "{}", outcome.text)
    } else {
        write!(std::io::stdout().lock(), "{}", outcome.text)
    };
    ExitCode::from(outcome.exit_code as u8)
}
