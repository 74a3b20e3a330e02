//! Sweeps the second exam of a pair to show the three kinetics branches.
//!
//! ```bash
//! cargo run --example temporal_kinetics
//! ```

use pneumoscan::indicators::{temporal_infection_rate, ExamObservation, TemporalParams};

fn main() -> anyhow::Result<()> {
    let params = TemporalParams::default();
    let first = ExamObservation::new(0, 4, 9)?;
    println!("first exam f = {:.2}, delta = {}", first.rate(), params.delta);
    for n in 0..=9 {
        let second = ExamObservation::new(3, n, 9)?;
        let (s2, branch) = temporal_infection_rate(&first, &second, &params)?;
        println!("N = {n}  f(t2) {:>6.2}  {:<12} S2 {:>6.2}", second.rate(), branch.to_string(), s2);
    }
    Ok(())
}
