use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ofo_core::controller::Termination;
use ofo_core::harness::{compare_modes, run_scenario, sweep, RunOptions, ScenarioConfig, ScenarioSummary};

#[derive(Parser)]
#[command(name = "ofo", version, about = "Online feedback optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (its sweep, if it has one).
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Variant name or mode spec such as `sdp-full+step`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Run every manual-tuning case of a scenario.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per listed mode or variant.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        modes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, mode, iters } => ScenarioConfig::load(&scenario).and_then(|cfg| {
            let opts = RunOptions { out_dir: out, n_iters: iters, dry_run: false };
            run_scenario(&cfg, mode.as_deref(), &opts)
        }),
        Command::Sweep { scenario, out } => ScenarioConfig::load(&scenario).and_then(|cfg| {
            let opts = RunOptions { out_dir: out, ..Default::default() };
            sweep(&cfg, &opts)
        }),
        Command::Compare { scenario, modes, out } => ScenarioConfig::load(&scenario).and_then(|cfg| {
            let opts = RunOptions { out_dir: out, ..Default::default() };
            compare_modes(&cfg, &modes, &opts)
        }),
    };
    match result {
        Ok(summary) => report(&summary),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn report(summary: &ScenarioSummary) -> ExitCode {
    print!("{}", summary.table());
    let mut code = ExitCode::SUCCESS;
    for o in &summary.outcomes {
        if let Some(p) = &o.csv_path {
            println!("wrote {}", p.display());
        }
        if let Termination::Error(e) = &o.trace.termination {
            eprintln!("error: run '{}' stopped at record {}: {e}", o.name, o.trace.records.len() - 1);
            code = ExitCode::FAILURE;
        }
    }
    code
}
