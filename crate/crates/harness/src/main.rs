use std::path::PathBuf;
use std::process::ExitCode;

use cbl_harness::config::{self, ExperimentKind};
use cbl_harness::report::emit_report;
use cbl_harness::{run_experiment, RunOptions, EXIT_INVALID};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbl", version, about = "Channel Boussinesq experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $CBL_OUT_ROOT/<kind>-<config hash>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    VerifyJk(RunArgs),
    VerifyKernels(RunArgs),
    VerifyGreens(RunArgs),
    LinearDecay(RunArgs),
    EnergyAudit(RunArgs),
    NonlinearRun(RunArgs),
    ThresholdSweep(RunArgs),
    /// Summarize a run directory and regenerate its plots.
    Report { dir: PathBuf },
}

fn run(kind: ExperimentKind, args: RunArgs) -> i32 {
    let mut settings = match config::load(&args.config, kind) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    let opts = RunOptions {
        out: args.out,
        jobs: args.jobs.map(|j| j as usize),
        plot: args.plot,
    };
    match run_experiment(&settings, &opts) {
        Ok(r) => {
            let failed: Vec<_> = r.manifest.assertions.iter().filter(|a| !a.passed).collect();
            for a in &failed {
                eprintln!("FAIL {} [{}]", a.name, a.anchor);
            }
            if let Some(e) = &r.manifest.error {
                eprintln!("aborted: {e}");
            }
            println!("{}", r.dir.display());
            r.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::VerifyJk(a) => run(ExperimentKind::VerifyJk, a),
        Command::VerifyKernels(a) => run(ExperimentKind::VerifyKernels, a),
        Command::VerifyGreens(a) => run(ExperimentKind::VerifyGreens, a),
        Command::LinearDecay(a) => run(ExperimentKind::LinearDecay, a),
        Command::EnergyAudit(a) => run(ExperimentKind::EnergyAudit, a),
        Command::NonlinearRun(a) => run(ExperimentKind::NonlinearRun, a),
        Command::ThresholdSweep(a) => run(ExperimentKind::ThresholdSweep, a),
        Command::Report { dir } => {
            let r = emit_report(&dir);
            print!("{}", r.text);
            r.exit_code
        }
    };
    ExitCode::from(code as u8)
}
