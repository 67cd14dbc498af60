use std::path::PathBuf;
use std::process::ExitCode;

use caisim::cli;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caisim", version, about = "Compound AI serving simulator")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write report.json and timeline.csv.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one or two scenario fields and write heatmap.csv.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long)]
        values: String,
        #[arg(long, requires = "values2")]
        axis2: Option<String>,
        #[arg(long, requires = "axis2")]
        values2: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several scenarios and print a comparison table.
    Compare {
        #[arg(required = true, num_args = 2..)]
        scenarios: Vec<PathBuf>,
    },
    /// Run the built-in acceptance checks.
    Validate {
        #[arg(long)]
        scenarios: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let code = match Args::parse().cmd {
        Cmd::Run { scenario, out } => cli::cmd_run(&scenario, out.as_deref()),
        Cmd::Sweep {
            scenario,
            axis,
            values,
            axis2,
            values2,
            jobs,
            out,
        } => {
            let mut axes = vec![cli::SweepAxis::parse(&axis, &values)];
            if let (Some(a), Some(v)) = (axis2, values2) {
                axes.push(cli::SweepAxis::parse(&a, &v));
            }
            cli::cmd_sweep(&scenario, &axes, out.as_deref(), jobs)
        }
        Cmd::Compare { scenarios } => cli::cmd_compare(&scenarios),
        Cmd::Validate { scenarios } => cli::cmd_validate(scenarios.as_deref()),
    };
    ExitCode::from(code as u8)
}
