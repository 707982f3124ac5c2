//! Command-line runner: loads a program file, runs it under the selected
//! semantics, and emits the trace, outcome and fairness report.
//!
//! Exit codes: 0 success, 1 fail, 2 deadlock, 3 step limit, 64 usage or
//! parse errors.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use faircc_core::engine::{self, ChoicePolicy, EngineError, FairMode, Mode, RunOptions};
use faircc_core::lang;
use faircc_core::scheduler::SoftPolicy;

const USAGE_EXIT: i32 = 64;
const INTERNAL_EXIT: i32 = 70;

#[derive(Parser)]
#[command(
    name = "faircc",
    version,
    about = "Run fair (soft) concurrent constraint programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run a program file and print its trace and outcome
    Run {
        /// Path to the program file
        file: PathBuf,

        /// Rule table: plain (cc) or threshold-aware (scc)
        #[arg(long, value_enum, default_value_t = ModeArg::Scc)]
        mode: ModeArg,

        /// Scheduling for fair groups
        #[arg(long, value_enum, default_value_t = FairArg::None)]
        fair: FairArg,

        /// Soft selection polarity (requires --fair soft)
        #[arg(long = "soft-select", value_enum)]
        soft_select: Option<SoftSelectArg>,

        /// Choice determinization
        #[arg(long, value_enum, default_value_t = ChoiceArg::Leftmost)]
        choice: ChoiceArg,

        /// RNG seed (required with --choice seeded)
        #[arg(long)]
        seed: Option<u64>,

        /// Step budget before the run is cut off
        #[arg(long = "max-steps", default_value_t = 10_000)]
        max_steps: usize,

        /// Trace output format
        #[arg(long, value_enum, default_value_t = TraceArg::Json)]
        trace: TraceArg,

        /// Print the fairness report after a `---` separator
        #[arg(long)]
        report: bool,

        /// Write the fairness report to a file instead of stdout
        #[arg(long = "report-file")]
        report_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Cc,
    Scc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FairArg {
    None,
    Crisp,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SoftSelectArg {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChoiceArg {
    Leftmost,
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceArg {
    Json,
    Pretty,
    Off,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => USAGE_EXIT,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Commands::Run {
            file,
            mode,
            fair,
            soft_select,
            choice,
            seed,
            max_steps,
            trace,
            report,
            report_file,
        } => run_command(
            &file,
            mode,
            fair,
            soft_select,
            choice,
            seed,
            max_steps,
            trace,
            report,
            report_file,
        ),
    }
}

fn usage(message: &str) -> i32 {
    eprintln!("error: {message}");
    USAGE_EXIT
}

#[allow(clippy::too_many_arguments)]
fn run_command(
    file: &PathBuf,
    mode: ModeArg,
    fair: FairArg,
    soft_select: Option<SoftSelectArg>,
    choice: ChoiceArg,
    seed: Option<u64>,
    max_steps: usize,
    trace: TraceArg,
    report: bool,
    report_file: Option<PathBuf>,
) -> i32 {
    if soft_select.is_some() && fair != FairArg::Soft {
        return usage("--soft-select only applies with --fair soft");
    }
    let choice = match (choice, seed) {
        (ChoiceArg::Leftmost, None) => ChoicePolicy::Leftmost,
        (ChoiceArg::Leftmost, Some(_)) => {
            return usage("--seed only applies with --choice seeded");
        }
        (ChoiceArg::Seeded, Some(seed)) => ChoicePolicy::Seeded(seed),
        (ChoiceArg::Seeded, None) => {
            return usage("--choice seeded requires --seed");
        }
    };

    let source = match fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => return usage(&format!("cannot read {}: {e}", file.display())),
    };
    let program = match lang::parse(&source) {
        Ok(p) => Arc::new(p),
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return USAGE_EXIT;
        }
    };

    let opts = RunOptions {
        mode: match mode {
            ModeArg::Cc => Mode::Cc,
            ModeArg::Scc => Mode::Scc,
        },
        fair: match fair {
            FairArg::None => FairMode::NoFair,
            FairArg::Crisp => FairMode::Crisp,
            FairArg::Soft => FairMode::Soft,
        },
        soft_policy: match soft_select.unwrap_or(SoftSelectArg::Min) {
            SoftSelectArg::Min => SoftPolicy::Min,
            SoftSelectArg::Max => SoftPolicy::Max,
        },
        choice,
        max_steps,
    };

    let result = match engine::run(program, opts) {
        Ok(r) => r,
        Err(EngineError::ThresholdsInCcMode) => {
            return usage(&EngineError::ThresholdsInCcMode.to_string());
        }
        Err(e) => {
            eprintln!("error: {e}");
            return INTERNAL_EXIT;
        }
    };

    match trace {
        TraceArg::Json => {
            for event in &result.trace {
                println!("{}", event.to_json());
            }
            println!("{}", result.outcome.to_json());
        }
        TraceArg::Pretty => {
            for event in &result.trace {
                println!("{}", event.pretty());
            }
            println!("outcome: {}", result.outcome.to_json());
        }
        TraceArg::Off => {}
    }

    let report_json = result.report.to_json();
    if let Some(path) = &report_file {
        if let Err(e) = fs::write(path, format!("{report_json}\n")) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return INTERNAL_EXIT;
        }
    } else if report {
        println!("---");
        println!("{report_json}");
    }

    result.outcome.exit_code()
}
