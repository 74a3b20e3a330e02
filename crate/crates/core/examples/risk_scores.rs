//! Scores the nine worked patients and the five image pairs with the default
//! scoring configuration.
//!
//! ```bash
//! cargo run --example risk_scores
//! ```

use pneumoscan::scenarios;
use pneumoscan::ScoringConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ScoringConfig::default();
    println!("{:<3} {:<6} {:<5} {:>6} {:>7} {:>6} {:>8}  verdict", "#", "age", "N/n", "S1", "S2", "S3", "F");
    for p in scenarios::run_patients(&cfg)? {
        println!(
            "{:<3} {:<6} {:<5} {:>6} {:>7.2} {:>6} {:>8.5}  {}",
            p.patient, p.age, p.infected, p.s1, p.s2, p.s3, p.f, p.verdict.as_str()
        );
    }
    println!();
    for p in scenarios::run_pairs(&cfg.temporal())? {
        println!(
            "pair {}  f(t1) {:>6.2}  +{}d  f(t2) {:>6.2}  {:<12} S2 {:.2}",
            p.pair, p.f_t1, p.elapsed_days, p.f_t2, p.branch.to_string(), p.s2
        );
    }
    Ok(())
}
