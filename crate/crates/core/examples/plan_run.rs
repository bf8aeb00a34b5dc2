//! Loads an experiment plan, runs it, and prints the report.
//!
//! Usage: `cargo run --release --example plan_run -- [plan.toml] [out-dir]`

use std::path::PathBuf;

use heatprobe::plan::load_plan;
use heatprobe::run::{report, run_plan};

fn main() -> heatprobe::Result<()> {
    let mut args = std::env::args().skip(1);
    let plan = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../plans/minimal.toml"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("heatprobe-plan-run"));
    let loaded = load_plan(&plan)?;
    let output = run_plan(&loaded, &out, 1)?;
    for f in &output.files {
        println!("wrote {}", f.display());
    }
    report(&out, &mut std::io::stdout().lock())
}
