use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pneumoscan::classifier::{self, ExternalPredictionSet, ModelParams, TileKey, TrainConfig};
use pneumoscan::evaluation::{self, DecisionMode, ReportFormat, Split};
use pneumoscan::gradcheck;
use pneumoscan::http::{self, ServeConfig};
use pneumoscan::imageprep::{self, ResizeStrategy};
use pneumoscan::indicators::{self, Age, Comorbidities, ExamObservation, RiskInputs, ScoringConfig};
use pneumoscan::scenarios;

#[derive(Parser)]
#[command(name = "pneumoscan", version, about = "Chest X-ray pneumonia screening and risk indicators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once('x').ok_or("grid must look like 3x3")?;
    Ok((
        r.parse().map_err(|_| "bad grid rows")?,
        c.parse().map_err(|_| "bad grid cols")?,
    ))
}

#[derive(Subcommand)]
enum Command {
    /// Resize an image and cut it into grid tiles.
    Prep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "raw")]
        strategy: ResizeStrategy,
        #[arg(long, default_value_t = 310)]
        width: usize,
        #[arg(long, default_value_t = 310)]
        height: usize,
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(usize, usize)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic fixture dataset.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the softmax model on a manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        coords: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Predict whole-image and tile probabilities as JSON Lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Predict every image of a manifest.
        #[arg(long, conflicts_with = "image")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value = "3x3", value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long, default_value = "raw")]
        strategy: ResizeStrategy,
        #[arg(long, default_value_t = 310)]
        width: usize,
        #[arg(long, default_value_t = 310)]
        height: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a manifest against JSON Lines predictions.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "majority")]
        strategy: DecisionMode,
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Compute the fatality indicator for one patient.
    Score {
        /// Age in years or a bracket such as 50-59.
        #[arg(long)]
        age: String,
        #[arg(long, default_value_t = 0)]
        serious: usize,
        #[arg(long, default_value_t = 0)]
        moderate: usize,
        #[arg(long)]
        infected: usize,
        #[arg(long, default_value_t = 9)]
        tiles: usize,
        /// Virus tile count on the previous exam, enabling the two-exam rule.
        #[arg(long)]
        prev_infected: Option<usize>,
        #[arg(long, env = "PNEUMO_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Re-run the worked patient and image-pair scenarios.
    Simulate {
        #[arg(long, env = "PNEUMO_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Run the HTTP triage service.
    Serve {
        #[arg(long, env = "PNEUMO_STORE_DIR", default_value = "pneumo-store")]
        store_dir: PathBuf,
        #[arg(long, env = "PNEUMO_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PNEUMO_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn scoring(path: Option<&PathBuf>) -> Result<ScoringConfig> {
    match path {
        Some(p) => Ok(ScoringConfig::load(p)?),
        None => Ok(ScoringConfig::default()),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Prep { input, strategy, width, height, grid, out } => {
            let img = imageprep::load_image(&input)?;
            std::fs::create_dir_all(&out)?;
            let resized = strategy.apply(&img, width, height)?;
            let stem = img.id().to_string();
            resized.save(out.join(format!("{stem}.png")))?;
            let mut written = 1;
            if let Some((rows, cols)) = grid {
                let tiles = imageprep::split_grid(&img, rows, cols)?;
                for (k, tile) in tiles.tiles().iter().enumerate() {
                    strategy
                        .apply(tile, width, height)?
                        .save(out.join(format!("{stem}_tile{k}.png")))?;
                    written += 1;
                }
            }
            eprintln!("wrote {written} image(s) to {}", out.display());
        }
        Command::Fixture { out, per_class, seed } => {
            let m = evaluation::generate_fixture(&out, per_class, seed)?;
            eprintln!(
                "wrote {} images ({} train / {} test) and manifest.csv to {}",
                m.entries().len(),
                m.count_split(Split::Train),
                m.count_split(Split::Test),
                out.display()
            );
        }
        Command::Train { manifest, epochs, batch_size, lr, seed, out } => {
            let m = evaluation::load_manifest(&manifest)?;
            let data = m.load_labeled(Split::Train)?;
            let cfg = TrainConfig { epochs, batch_size, learning_rate: lr, seed };
            let outcome = classifier::train(&data, &cfg)?;
            for e in &outcome.history {
                print_json(e)?;
            }
            outcome.params.save(&out)?;
            eprintln!("saved model to {}", out.display());
        }
        Command::Gradcheck { seed, trials, coords, step, tolerance } => {
            let report = gradcheck::run(seed, trials, coords, step, tolerance)?;
            println!(
                "{} coordinates over {} draws: max relative error {:.3e} (tolerance {:.0e}) {}",
                report.checks.len(),
                report.trials,
                report.max_rel_error,
                report.tolerance,
                if report.passed { "PASS" } else { "FAIL" }
            );
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Predict { model, manifest, image, grid, strategy, width, height, out } => {
            let params = ModelParams::load(&model)?;
            let images = match (manifest, image) {
                (Some(m), _) => {
                    let m = evaluation::load_manifest(&m)?;
                    m.entries()
                        .iter()
                        .map(|e| Ok(imageprep::load_image(m.resolve(e))?.with_id(e.image_id())))
                        .collect::<Result<Vec<_>>>()?
                }
                (None, Some(p)) => vec![imageprep::load_image(&p)?],
                (None, None) => bail!("pass --manifest or --image"),
            };
            let opts = imageprep::PrepOptions { strategy, width, height, rows: grid.0, cols: grid.1 };
            let mut set = ExternalPredictionSet::default();
            for img in &images {
                let prepared = imageprep::prepare(img, &opts)?;
                set.insert(img.id(), TileKey::Whole, classifier::forward(&params, &prepared.whole)?);
                for (k, tile) in prepared.tiles.iter().enumerate() {
                    set.insert(img.id(), TileKey::Tile(k), classifier::forward(&params, tile)?);
                }
            }
            match out {
                Some(p) => std::fs::write(&p, set.to_jsonl()).with_context(|| p.display().to_string())?,
                None => print!("{}", set.to_jsonl()),
            }
        }
        Command::Evaluate { manifest, predictions, strategy, format } => {
            let format: ReportFormat = format.parse()?;
            let m = evaluation::load_manifest(&manifest)?;
            let preds = classifier::load_external_predictions(&predictions)?;
            let result = evaluation::evaluate(&m, &preds, strategy)?;
            if let Some(r) = &result.test {
                print!("{}", evaluation::render_report(r, format));
                println!();
            }
            if let Some(b) = &result.blind {
                print!("{}", evaluation::render_blind(b, format));
                println!();
            }
            if result.test.is_none() && result.blind.is_none() {
                bail!("manifest has no test or blind entries");
            }
        }
        Command::Score { age, serious, moderate, infected, tiles, prev_infected, config } => {
            let cfg = scoring(config.as_ref())?;
            let age = match age.parse::<f64>() {
                Ok(y) => Age::Years(y),
                Err(_) => Age::Bracket(age),
            };
            let mut exams = Vec::new();
            if let Some(prev) = prev_infected {
                exams.push(ExamObservation::new(0, prev, tiles)?);
            }
            exams.push(ExamObservation::new(1, infected, tiles)?);
            let inputs = RiskInputs {
                age,
                comorbidities: Comorbidities::counts(serious, moderate),
                exams,
            };
            print_json(&indicators::assess(&inputs, &cfg)?)?;
        }
        Command::Simulate { config } => {
            let cfg = scoring(config.as_ref())?;
            for p in scenarios::run_patients(&cfg)? {
                print_json(&p)?;
            }
            for p in scenarios::run_pairs(&cfg.temporal())? {
                print_json(&p)?;
            }
        }
        Command::Serve { store_dir, port, host, config, model } => {
            let cfg = ServeConfig {
                store_dir,
                host,
                port,
                scoring: scoring(config.as_ref())?,
                model: model.map(ModelParams::load).transpose()?,
            };
            tokio::runtime::Runtime::new()?.block_on(http::serve(cfg))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
