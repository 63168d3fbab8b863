//! Runs every acceptance criterion and prints one line per result.
//! Plain binary (no libtest harness) so the lines are never captured.

use std::process::ExitCode;

use roomrelight::acceptance::{run, AcceptanceOptions, CRITERIA};

fn main() -> ExitCode {
    // `cargo test -- --list` and filters meant for other targets land here too
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let report = run(&AcceptanceOptions::default(), |r| println!("{}", r.line()));
    let failed: Vec<_> = report.results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if report.results.len() != CRITERIA.len() || !failed.is_empty() {
        println!("acceptance: FAILED {failed:?} ({} of {} ran)", report.results.len(), CRITERIA.len());
        return ExitCode::FAILURE;
    }
    println!("acceptance: all {} criteria passed", CRITERIA.len());
    ExitCode::SUCCESS
}
