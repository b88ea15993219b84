use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fusetile_core::evaluation::SPACE_LIMIT;

use crate::commands;

/// Joint tiling and fusion optimizer for systolic-array accelerators.
#[derive(Debug, Parser)]
#[command(name = "fusetile", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Random seed. Overrides the seed in the optimizer config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Accelerator preset name or JSON path.
    #[arg(long, global = true, default_value = "gemmini-large")]
    pub hw: String,
    /// Workload JSON.
    #[arg(long, global = true)]
    pub workload: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the gradient optimizer and write the decoded strategy.
    Optimize {
        /// Optimizer config JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare closed-form traffic with loop-nest counts on random tilings.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        samples: u64,
        /// Perturb one closed-form count per sample.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Enumerate the whole strategy space and write the optimum.
    Exhaustive {
        /// Refuse when the per-node candidate count exceeds this.
        #[arg(long, default_value_t = SPACE_LIMIT)]
        limit: u64,
    },
    /// Run search methods at an equal evaluation budget.
    Baseline {
        #[arg(long, value_delimiter = ',', default_value = "grad,ga,random")]
        methods: Vec<String>,
        /// Cost-model evaluations per method and seed.
        #[arg(long, default_value_t = 5000)]
        budget: u64,
        /// Seeds `seed, seed+1, ...`; rows report the median.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        /// Optimizer config for the gradient method.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Merge run directories into one CSV.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Add z-score columns for latency and energy.
        #[arg(long)]
        zscore: bool,
    },
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success,
    /// Bad arguments or input files.
    Input,
    /// The command ran but the best result violates a constraint, or a check
    /// found mismatches.
    Infeasible,
}

impl Exit {
    pub fn code(self) -> u8 {
        match self {
            Exit::Success => 0,
            Exit::Input => 1,
            Exit::Infeasible => 2,
        }
    }
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I) -> Exit
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Input } else { Exit::Success };
        }
    };
    match commands::dispatch(&cli) {
        Ok(exit) => exit,
        Err(e) => {
            eprintln!("error: {e:#}");
            Exit::Input
        }
    }
}
