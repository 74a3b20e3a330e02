//! Generates the synthetic fixture, trains the softmax model on its train
//! split and reports held-out accuracy.
//!
//! ```bash
//! cargo run --release --example train_softmax
//! ```

use pneumoscan::classifier::{self, TrainConfig};
use pneumoscan::evaluation::{self, Split};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = evaluation::generate_fixture(dir.path(), 64, 7)?;
    let train = manifest.load_labeled(Split::Train)?;
    let test = manifest.load_labeled(Split::Test)?;

    let cfg = TrainConfig::default();
    let started = std::time::Instant::now();
    let outcome = classifier::train(&train, &cfg)?;
    println!("initial loss {:.4}", outcome.initial_loss);
    for e in &outcome.history {
        println!("epoch {:>2}  loss {:.4}  train acc {:.3}", e.epoch, e.loss, e.accuracy);
    }

    let mut pairs = Vec::new();
    for (img, actual) in &test {
        pairs.push((*actual, classifier::forward(&outcome.params, img)?.argmax()));
    }
    let report = evaluation::metrics(&evaluation::confusion(&pairs)?)?.labeled("fixture test", "softmax");
    print!("{}", evaluation::render_report(&report, evaluation::ReportFormat::Text));
    println!("trained in {:.2?}", started.elapsed());
    Ok(())
}
