use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heatprobe::plan::{load_plan, validate_plan};
use heatprobe::run::{plot, report, run_plan};

#[derive(Parser)]
#[command(name = "heatprobe", version, about = "Detect a moving inclusion from boundary heat measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan and its scenario without solving anything.
    Validate {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Run a plan and write its artifacts.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "HEATPROBE_WORKERS", default_value_t = 1)]
        workers: usize,
        /// Overrides the plan's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render the plots of a finished run.
    Plot {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { plan } => validate_plan(&plan).map(|s| println!("{s}")),
        Command::Run {
            plan,
            out,
            workers,
            seed,
        } => load_plan(&plan).and_then(|mut loaded| {
            if let Some(seed) = seed {
                loaded.plan.seed = seed;
            }
            let dir = loaded.output_dir(out.as_deref());
            let output = run_plan(&loaded, &dir, workers)?;
            for f in &output.files {
                println!("{}", f.display());
            }
            Ok(())
        }),
        Command::Plot { out } => plot(&out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        Command::Report { out } => report(&out, &mut std::io::stdout().lock()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("heatprobe: {e}");
            ExitCode::FAILURE
        }
    }
}
