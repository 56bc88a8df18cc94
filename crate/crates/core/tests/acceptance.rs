//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use ppkg::selftest::{all_passed, format_line, run_selftest, SelftestOptions};

fn main() {
    let results = run_selftest(&SelftestOptions::default());
    for r in &results {
        println!("{}", format_line(r));
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("{passed}/{} criteria passed", results.len());
    if !all_passed(&results) {
        std::process::exit(1);
    }
}
