//! Runs the eleven acceptance criteria and prints one line per criterion.
//!
//! Environment:
//! - `EXSWITCH_ACCEPTANCE_ONLY=1,2,8` restricts the run;
//! - `EXSWITCH_ACCEPTANCE_COARSE=1` uses the coarse regulator grid;
//! - `EXSWITCH_ACCEPTANCE_STRICT=1` exits nonzero when any criterion fails.

use std::process::ExitCode;

use exswitch::acceptance::{run_suite, AcceptanceOptions};

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::var("EXSWITCH_ACCEPTANCE_ONLY")
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let opts = AcceptanceOptions {
        coarse: flag("EXSWITCH_ACCEPTANCE_COARSE"),
        ..Default::default()
    };
    println!(
        "acceptance: running {} criteria",
        if only.is_empty() { 11 } else { only.len() }
    );
    let reports = run_suite(&only, &opts, |r| println!("{r}"));
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        reports.len() - failed
    );
    if failed > 0 && flag("EXSWITCH_ACCEPTANCE_STRICT") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
