//! Finite-difference verification of the softmax cross-entropy gradient.
//!
//! The numeric side only evaluates the loss, never the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::{
    extract_features, loss_and_grad_features, loss_features, ClassLabel, ClassifierError,
    ModelParams, FEATURE_DIM, FEATURE_SPEC,
};
use crate::imageprep::GrayImage;

/// A single scalar parameter: weight `(class, feature)` or a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coord {
    Weight { class: usize, feature: usize },
    Bias { class: usize },
}

impl Coord {
    fn slot<'a>(&self, p: &'a mut ModelParams) -> &'a mut f64 {
        match *self {
            Self::Weight { class, feature } => &mut p.weights[class][feature],
            Self::Bias { class } => &mut p.bias[class],
        }
    }
}

/// Central difference `(L(θ+h) − L(θ−h)) / 2h` along one coordinate.
pub fn central_difference(
    params: &ModelParams,
    batch: &[(Vec<f64>, ClassLabel)],
    coord: Coord,
    step: f64,
) -> Result<f64, ClassifierError> {
    let mut p = params.clone();
    let base = *coord.slot(&mut p);
    *coord.slot(&mut p) = base + step;
    let plus = loss_features(&p, batch)?;
    *coord.slot(&mut p) = base - step;
    let minus = loss_features(&p, batch)?;
    Ok((plus - minus) / (2.0 * step))
}

/// `|a − n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordCheck {
    pub trial: usize,
    pub coord: Coord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub coords_per_trial: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub checks: Vec<CoordCheck>,
}

/// Random parameters with weights in [-0.5, 0.5] and bias in [-1, 1].
pub fn random_params(rng: &mut impl Rng) -> ModelParams {
    ModelParams {
        seed: 0,
        weights: (0..3)
            .map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect(),
        bias: [0; 3].map(|_| rng.random_range(-1.0..1.0)),
        feature_spec: FEATURE_SPEC.to_string(),
    }
}

/// Random noise images of random sizes, random labels.
pub fn random_batch(rng: &mut impl Rng, size: usize) -> Result<Vec<(Vec<f64>, ClassLabel)>, ClassifierError> {
    (0..size)
        .map(|i| {
            let (w, h) = (rng.random_range(8..48), rng.random_range(8..48));
            let px = (0..w * h).map(|_| rng.random::<u8>()).collect();
            let img = GrayImage::new(format!("noise{i}"), w, h, px)?;
            let label = ClassLabel::ALL[rng.random_range(0..3)];
            Ok((extract_features(&img)?, label))
        })
        .collect()
}

/// Compares the analytic gradient with central differences on
/// `coords` random coordinates for each of `trials` random draws.
pub fn run(seed: u64, trials: usize, coords: usize, step: f64, tolerance: f64) -> Result<GradCheckReport, ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::with_capacity(trials * coords);
    for trial in 0..trials {
        let params = random_params(&mut rng);
        let batch_size = rng.random_range(1..=6);
        let batch = random_batch(&mut rng, batch_size)?;
        let (_, grad) = loss_and_grad_features(&params, &batch)?;
        for _ in 0..coords {
            let class = rng.random_range(0..3);
            let coord = if rng.random_bool(0.1) {
                Coord::Bias { class }
            } else {
                Coord::Weight {
                    class,
                    feature: rng.random_range(0..FEATURE_DIM),
                }
            };
            let analytic = match coord {
                Coord::Weight { class, feature } => grad.weights[class][feature],
                Coord::Bias { class } => grad.bias[class],
            };
            let numeric = central_difference(&params, &batch, coord, step)?;
            checks.push(CoordCheck {
                trial,
                coord,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        trials,
        coords_per_trial: coords,
        step,
        tolerance,
        max_rel_error,
        passed: max_rel_error < tolerance,
        checks,
    })
}
