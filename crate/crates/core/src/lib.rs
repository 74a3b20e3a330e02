//! Chest X-ray pneumonia screening toolkit.
//!
//! The pipeline reads a grayscale radiograph, resizes it ([`imageprep`]),
//! cuts it into a grid of tiles, classifies every tile as Bacteria, Normal
//! or Virus ([`classifier`]), and collects the tile labels into a
//! contamination matrix ([`aggregation`]). The number of viral tiles feeds
//! the infection-rate score, which together with age and comorbidity
//! scores yields the fatality indicator `F` ([`indicators`]).
//!
//! [`evaluation`] reproduces confusion-matrix accounting and generates a
//! synthetic dataset; [`triage`], [`store`] and [`http`] bind everything
//! into a persistent patient service.
//!
//! ## Running examples
//!
//! ```bash
//! cargo run --example risk_scores
//! cargo run --example tile_pipeline
//! ```

pub mod aggregation;
pub mod classifier;
pub mod evaluation;
pub mod gradcheck;
pub mod http;
pub mod imageprep;
pub mod indicators;
pub mod scenarios;
pub mod store;
pub mod triage;

pub use aggregation::{ContaminationMatrix, ImageDecision, Strategy};
pub use classifier::{ClassLabel, ClassProbs, ModelParams};
pub use imageprep::{GrayImage, PrepOptions, ResizeStrategy, TileGrid};
pub use indicators::{Age, Branch, Comorbidities, RiskAssessment, ScoringConfig, Verdict};
