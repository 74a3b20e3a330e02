//! Builds a contamination matrix from tile predictions and compares the
//! majority-vote and default decisions.
//!
//! ```bash
//! cargo run --example contamination_matrix
//! ```

use pneumoscan::aggregation::{build_contamination_matrix, default_decision, majority_vote, presume_covid};
use pneumoscan::{ClassLabel, ClassProbs};

fn main() -> anyhow::Result<()> {
    use ClassLabel::*;
    let tiles = [
        ClassProbs::peaked(Virus, 0.7),
        ClassProbs::peaked(Normal, 0.6),
        ClassProbs::peaked(Virus, 0.9),
        ClassProbs::peaked(Bacteria, 0.5),
        ClassProbs::peaked(Normal, 0.8),
        ClassProbs::peaked(Virus, 0.55),
        ClassProbs::peaked(Bacteria, 0.9),
        ClassProbs::peaked(Bacteria, 0.6),
        ClassProbs::peaked(Normal, 0.7),
    ];
    let cm = build_contamination_matrix(&tiles, 3, 3, "demo")?;
    for r in 0..cm.rows {
        let row: Vec<_> = (0..cm.cols).map(|c| format!("{:<8}", cm.cell(r, c).label.as_str())).collect();
        println!("{}", row.join(" "));
    }
    println!("N = {} of {}, infection rate {:.2}", cm.virus_count, cm.len(), cm.infection_rate());

    // three labels with three cells each: the vote falls back to summed probability
    for label in [Bacteria, Normal, Virus] {
        let mass: f64 = cm.cells.iter().map(|c| c.probs.get(label)).sum();
        println!("{:<8} count {}  mass {mass:.3}", label.as_str(), cm.count(label));
    }
    let vote = majority_vote(&cm);
    let whole = ClassProbs::new([0.2, 0.5, 0.3])?;
    let by_default = default_decision(Some(&whole), Some(&cm))?;
    for d in [&vote, &by_default] {
        println!(
            "{:<16} {:<8} pneumonia={} presumed covid={}",
            d.strategy.as_str(),
            d.label.as_str(),
            d.pneumonia,
            presume_covid(d, true)
        );
    }
    println!("{}", serde_json::to_string_pretty(&cm.export())?);
    Ok(())
}
