//! Runs every acceptance criterion at its stated tolerance and budget and
//! prints one line per criterion.

use feedback_lab::verify::{run_criterion, CRITERIA};
use feedback_lab_core::lyapunov::NConvention;

fn main() {
    let mut failed = Vec::new();
    for (id, _, _) in CRITERIA {
        let r = run_criterion(id, NConvention::default(), 1);
        println!("{}", r.line());
        if !r.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", CRITERIA.len());
    } else {
        println!("acceptance: criteria {failed:?} failed");
        std::process::exit(1);
    }
}
