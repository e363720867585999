use clap::{Args, Parser, Subcommand};
use fbp_cli::{cmd_partition_report, cmd_run, cmd_sweep, cmd_verify, Axis, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Blockchain-backed decentralized federated learning simulator.
#[derive(Parser)]
#[command(name = "fbp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replaces `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "FBP_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every combination of the given axes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Output root; cell k goes to `cell_<k>/`. Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `PATH=JSON_ARRAY`, e.g. `aggregation.kind=["mean","median"]`.
        /// Repeatable.
        #[arg(long = "axis", value_parser = parse_axis)]
        axes: Vec<Axis>,
    },
    /// Verify an exported chain.json.
    Verify { chain: PathBuf },
    /// Print per-partition label histograms as CSV.
    PartitionReport {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    Axis::parse(s).map_err(|e| e.to_string())
}

fn overrides(common: &Common, out: Option<PathBuf>) -> Overrides {
    Overrides {
        out,
        seed: common.seed,
        workers: common.workers,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                fbp_cli::EXIT_INVALID
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Run { common, out } => cmd_run(&common.config, &overrides(&common, out)),
        Command::Sweep { common, out, axes } => {
            cmd_sweep(&common.config, &axes, &overrides(&common, out))
        }
        Command::Verify { chain } => cmd_verify(&chain),
        Command::PartitionReport { common } => {
            cmd_partition_report(&common.config, &overrides(&common, None))
        }
    };
    ExitCode::from(code as u8)
}
