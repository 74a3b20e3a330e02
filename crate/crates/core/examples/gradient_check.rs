//! Compares the analytic cross-entropy gradient with central differences.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use pneumoscan::gradcheck::{self, Coord};

fn main() -> anyhow::Result<()> {
    let report = gradcheck::run(7, 5, 20, 1e-5, 1e-4)?;
    for c in report.checks.iter().filter(|c| c.trial == 0).take(8) {
        let name = match c.coord {
            Coord::Weight { class, feature } => format!("w[{class}][{feature}]"),
            Coord::Bias { class } => format!("b[{class}]"),
        };
        println!("{name:<12} analytic {:+.8e}  numeric {:+.8e}  rel {:.1e}", c.analytic, c.numeric, c.rel_error);
    }
    println!(
        "{} checks over {} draws, max relative error {:.2e}: {}",
        report.checks.len(),
        report.trials,
        report.max_rel_error,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(())
}
