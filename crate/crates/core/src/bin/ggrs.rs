use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ggrs_core::harness::{partition_report, run_experiment, toy_appendix, write_outputs, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "ggrs", version, about = "Federated GCN simulator with geometry-regulated aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured regulation variant and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `experiment.out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the two-client scalar example and check it against its constants.
    ToyAppendix,
    /// Print per-client partition statistics.
    PartitionReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = match RunConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => return fail(e.into()),
            };
            let out_dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let result = match run_experiment(&cfg, seed) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            for v in &result.variants {
                for s in &v.seeds {
                    for w in &s.warnings {
                        eprintln!("warning (seed {}): {w}", s.seed);
                    }
                }
            }
            if let Err(e) = write_outputs(&cfg, &result, &out_dir) {
                return fail(e);
            }
            println!("wrote {}", out_dir.display());
            ExitCode::SUCCESS
        }
        Command::ToyAppendix => match toy_appendix() {
            Ok(report) => {
                print!("{report}");
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(3)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        },
        Command::PartitionReport { config, seed } => {
            let cfg = match RunConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => return fail(e.into()),
            };
            match partition_report(&cfg, seed) {
                Ok(r) => {
                    print!("{r}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
