//! Per-class accuracy for a three-class confusion matrix, plus blind-set
//! sensitivity for a batch of decisions.
//!
//! ```bash
//! cargo run --example evaluate_confusion
//! ```

use pneumoscan::aggregation::{ImageDecision, Strategy};
use pneumoscan::evaluation::{blind_sensitivity, metrics, render_blind, render_report, ConfusionMatrix3, ReportFormat};
use pneumoscan::ClassLabel;

fn main() -> anyhow::Result<()> {
    let cm = ConfusionMatrix3::from_counts([[145, 1, 2], [0, 137, 11], [4, 1, 143]]);
    let report = metrics(&cm)?.labeled("test", "reference");
    print!("{}", render_report(&report, ReportFormat::Text));
    println!("{}", render_report(&report, ReportFormat::Json));

    let labels = [ClassLabel::Virus, ClassLabel::Bacteria, ClassLabel::Virus, ClassLabel::Normal, ClassLabel::Virus];
    let decisions: Vec<_> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| ImageDecision::new(format!("blind{i}"), l, Strategy::MajorityVote))
        .collect();
    print!("{}", render_blind(&blind_sensitivity(&decisions)?, ReportFormat::Text));
    Ok(())
}
