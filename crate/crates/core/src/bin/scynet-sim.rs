use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scynet::cli::{cmd_report, cmd_run, cmd_verify_replay, CliError, ReportFormat, RunOptions};

#[derive(Parser)]
#[command(name = "scynet-sim", version, about = "Run and verify simulated tournament chains")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write logs and reports.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        tournaments: Option<u64>,
        /// Output directory; defaults to $SCYNET_SIM_OUT, then ./sim-out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a block log against a scenario's genesis.
    VerifyReplay { blocklog: PathBuf, scenario: PathBuf },
    /// Print a finished run as a per-node CSV table or as event lines.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Events,
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, seed, tournaments, out } => {
            let (report, dir) = cmd_run(&scenario, RunOptions { seed, tournaments, out })?;
            println!(
                "{} blocks, {} settlements, final state {}{}",
                report.blocks,
                report.settlements.len(),
                &report.final_state_hash[..16],
                report.halted.as_ref().map(|h| format!(", halted at height {}", h.height)).unwrap_or_default()
            );
            println!("wrote {}", dir.display());
        }
        Command::VerifyReplay { blocklog, scenario } => {
            let summary = cmd_verify_replay(&blocklog, &scenario)?;
            println!("replayed {} blocks, final state {}", summary.blocks, summary.final_state_hash);
        }
        Command::Report { dir, format } => {
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Events => ReportFormat::Events,
            };
            print!("{}", cmd_report(&dir, format)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
