//! Three-class prediction: labels, probability vectors, a linear softmax
//! model over fixed pixel features, and an adapter for predictions produced
//! by external CNNs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageprep::{resize_raw, GrayImage, ImageError};

/// Side of the square the feature extractor resamples every image to.
pub const FEATURE_SIDE: usize = 32;
/// 32x32 pixels plus mean and standard deviation.
pub const FEATURE_DIM: usize = FEATURE_SIDE * FEATURE_SIDE + 2;
pub const FEATURE_SPEC: &str = "raw32x32+meanstd-v1";
/// Allowed deviation of an external distribution's sum from 1 before it is rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;
const SHUFFLE_STREAM: u64 = 0x5eed_5eed_0bad_cafe;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("model parameters contain NaN or infinite values")]
    NonFiniteParams,
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample `{0}` has no class label")]
    UnlabeledSample(String),
    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unsupported feature spec `{0}`")]
    UnsupportedFeatureSpec(String),
    #[error("line {line}: malformed prediction: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: invalid distribution {probs:?}")]
    BadDistribution { line: usize, probs: Vec<f64> },
    #[error("line {line}: duplicate prediction for ({image_id}, {tile})")]
    DuplicateKey {
        line: usize,
        image_id: String,
        tile: TileKey,
    },
    #[error("invalid probability vector {0:?}")]
    InvalidProbs(Vec<f64>),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("json error: {0}")]
    Json(String),
}

/// Class labels in canonical confusion-matrix order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Bacteria = 0,
    Normal = 1,
    Virus = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [Self::Bacteria, Self::Normal, Self::Virus];
    /// Tie-break order, most preferred first.
    pub const PRIORITY: [ClassLabel; 3] = [Self::Virus, Self::Bacteria, Self::Normal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bacteria => "bacteria",
            Self::Normal => "normal",
            Self::Virus => "virus",
        }
    }

    /// Rank in the tie-break order; lower wins.
    pub fn priority_rank(self) -> usize {
        match self {
            Self::Virus => 0,
            Self::Bacteria => 1,
            Self::Normal => 2,
        }
    }

    pub fn is_pneumonia(self) -> bool {
        self != Self::Normal
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bacteria" | "b" => Ok(Self::Bacteria),
            "normal" | "n" => Ok(Self::Normal),
            "virus" | "v" => Ok(Self::Virus),
            other => Err(format!("unknown class label `{other}`")),
        }
    }
}

/// A probability distribution over [`ClassLabel`], indexed canonically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClassProbs([f64; 3]);

impl ClassProbs {
    /// Validates a distribution: finite, non-negative, summing to 1 within 1e-9.
    pub fn new(p: [f64; 3]) -> Result<Self, ClassifierError> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(ClassifierError::InvalidProbs(p.to_vec()));
        }
        Ok(Self(p))
    }

    /// Accepts a distribution whose sum is within `tol` of 1 and rescales it.
    pub fn renormalized(p: [f64; 3], tol: f64) -> Option<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > tol {
            return None;
        }
        Some(Self(p.map(|v| v / sum)))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    /// Puts `confidence` on one class and spreads the rest evenly.
    pub fn peaked(label: ClassLabel, confidence: f64) -> Self {
        let rest = (1.0 - confidence) / 2.0;
        let mut p = [rest; 3];
        p[label.index()] = confidence;
        Self(p)
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.index()]
    }

    /// Highest-probability label; exact ties go to Virus, then Bacteria, then Normal.
    pub fn argmax(&self) -> ClassLabel {
        argmax_with_priority(&self.0)
    }

    /// Component-wise mean of several distributions.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a ClassProbs>) -> Option<Self> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for p in items {
            for (a, v) in acc.iter_mut().zip(p.0) {
                *a += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self(acc.map(|a| a / n as f64)))
    }
}

impl<'de> Deserialize<'de> for ClassProbs {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = <[f64; 3]>::deserialize(d)?;
        ClassProbs::renormalized(raw, RENORMALIZE_TOLERANCE)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid distribution {raw:?}")))
    }
}

pub(crate) fn argmax_with_priority(values: &[f64; 3]) -> ClassLabel {
    let mut best = ClassLabel::PRIORITY[0];
    for &label in &ClassLabel::PRIORITY[1..] {
        if values[label.index()] > values[best.index()] {
            best = label;
        }
    }
    best
}

/// Deterministic feature vector: the image resampled to 32x32, scaled to
/// [0, 1] and flattened row-major, followed by its mean and population
/// standard deviation.
pub fn extract_features(img: &GrayImage) -> Result<Vec<f64>, ClassifierError> {
    let small = resize_raw(img, FEATURE_SIDE, FEATURE_SIDE)?;
    let mut features: Vec<f64> = small.pixels().iter().map(|&p| f64::from(p) / 255.0).collect();
    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    let var = features.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    features.push(mean);
    features.push(var.sqrt());
    Ok(features)
}

/// Linear softmax model parameters. Serializes to the model file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub seed: u64,
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; 3],
    pub feature_spec: String,
}

impl ModelParams {
    pub fn zeros() -> Self {
        Self {
            seed: 0,
            weights: vec![vec![0.0; FEATURE_DIM]; 3],
            bias: [0.0; 3],
            feature_spec: FEATURE_SPEC.to_string(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.bias.iter().all(|b| b.is_finite())
            && self.weights.iter().flatten().all(|w| w.is_finite())
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.feature_spec != FEATURE_SPEC {
            return Err(ClassifierError::UnsupportedFeatureSpec(self.feature_spec.clone()));
        }
        if self.weights.len() != 3 || self.weights.iter().any(|r| r.len() != FEATURE_DIM) {
            return Err(ClassifierError::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: self.feature_dim(),
            });
        }
        if !self.is_finite() {
            return Err(ClassifierError::NonFiniteParams);
        }
        Ok(())
    }

    pub fn logits(&self, features: &[f64]) -> [f64; 3] {
        let mut z = self.bias;
        for (zk, row) in z.iter_mut().zip(&self.weights) {
            *zk += row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
        }
        z
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClassifierError::Io(e.to_string()))?;
        let params: Self =
            serde_json::from_str(&text).map_err(|e| ClassifierError::Json(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let text = serde_json::to_string(self).map_err(|e| ClassifierError::Json(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ClassifierError::Io(e.to_string()))
    }
}

/// Weights uniform in [-0.01, 0.01] from a seeded ChaCha stream; bias zero.
pub fn init_model(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..3)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.random_range(-0.01..=0.01)).collect())
        .collect();
    ModelParams {
        seed,
        weights,
        bias: [0.0; 3],
        feature_spec: FEATURE_SPEC.to_string(),
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64; 3]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

pub fn forward_features(params: &ModelParams, features: &[f64]) -> Result<ClassProbs, ClassifierError> {
    if !params.is_finite() {
        return Err(ClassifierError::NonFiniteParams);
    }
    if features.len() != params.feature_dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: params.feature_dim(),
            actual: features.len(),
        });
    }
    Ok(ClassProbs(softmax(&params.logits(features))))
}

pub fn forward(params: &ModelParams, img: &GrayImage) -> Result<ClassProbs, ClassifierError> {
    if !params.is_finite() {
        return Err(ClassifierError::NonFiniteParams);
    }
    forward_features(params, &extract_features(img)?)
}

/// Gradient of the mean cross-entropy, shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; 3],
}

impl Gradient {
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .chain(self.bias.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Mean cross-entropy over pre-extracted features and its exact gradient.
pub fn loss_and_grad_features(
    params: &ModelParams,
    batch: &[(Vec<f64>, ClassLabel)],
) -> Result<(f64, Gradient), ClassifierError> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyBatch);
    }
    let dim = params.feature_dim();
    let mut grad = Gradient {
        weights: vec![vec![0.0; dim]; 3],
        bias: [0.0; 3],
    };
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (x, label) in batch {
        let p = forward_features(params, x)?.0;
        loss -= p[label.index()].max(f64::MIN_POSITIVE).ln();
        for (k, pk) in p.iter().enumerate() {
            // d(-ln p_y)/dz_k = p_k - [k == y]
            let delta = (pk - if k == label.index() { 1.0 } else { 0.0 }) * scale;
            grad.bias[k] += delta;
            for (g, xi) in grad.weights[k].iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
    }
    Ok((loss * scale, grad))
}

pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[(GrayImage, ClassLabel)],
) -> Result<(f64, Gradient), ClassifierError> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyBatch);
    }
    let feats = batch
        .iter()
        .map(|(img, y)| Ok((extract_features(img)?, *y)))
        .collect::<Result<Vec<_>, ClassifierError>>()?;
    loss_and_grad_features(params, &feats)
}

/// Mean cross-entropy only.
pub fn loss_features(params: &ModelParams, batch: &[(Vec<f64>, ClassLabel)]) -> Result<f64, ClassifierError> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyBatch);
    }
    let mut loss = 0.0;
    for (x, label) in batch {
        let p = forward_features(params, x)?;
        loss -= p.get(*label).max(f64::MIN_POSITIVE).ln();
    }
    Ok(loss / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy on the full training set after the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Loss on the full training set before the first update.
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
}

fn accuracy(params: &ModelParams, data: &[(Vec<f64>, ClassLabel)]) -> Result<f64, ClassifierError> {
    let mut hits = 0usize;
    for (x, y) in data {
        if forward_features(params, x)?.argmax() == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mini-batch gradient descent over pre-extracted features.
pub fn train_features(
    data: &[(Vec<f64>, ClassLabel)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let mut params = init_model(cfg.seed);
    let initial_loss = loss_features(&params, data)?;
    // separate stream from the one used for initialization
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = cfg.batch_size.max(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (_, grad) = loss_and_grad_features(&params, &batch)?;
            for (row, grow) in params.weights.iter_mut().zip(&grad.weights) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= cfg.learning_rate * g;
                }
            }
            for (b, g) in params.bias.iter_mut().zip(grad.bias) {
                *b -= cfg.learning_rate * g;
            }
            if !params.is_finite() {
                return Err(ClassifierError::NonFiniteParams);
            }
        }
        history.push(EpochStats {
            epoch,
            loss: loss_features(&params, data)?,
            accuracy: accuracy(&params, data)?,
        });
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        history,
    })
}


pub fn train(
    data: &[(GrayImage, ClassLabel)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    let feats = data
        .iter()
        .map(|(img, y)| Ok((extract_features(img)?, *y)))
        .collect::<Result<Vec<_>, ClassifierError>>()?;
    train_features(&feats, cfg)
}

/// Which part of an image a prediction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TileKey {
    Whole,
    Tile(usize),
}

impl TileKey {
    pub fn from_wire(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Self::Whole),
            t if t >= 0 => Some(Self::Tile(t as usize)),
            _ => None,
        }
    }

    pub fn to_wire(self) -> i64 {
        match self {
            Self::Whole => -1,
            Self::Tile(t) => t as i64,
        }
    }
}

impl fmt::Display for TileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Whole => f.write_str("whole"),
            Self::Tile(t) => write!(f, "tile {t}"),
        }
    }
}

/// One line of the predictions interchange format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionLine {
    pub image_id: String,
    pub tile: i64,
    pub probs: [f64; 3],
}

/// Predictions keyed by `(image_id, tile)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalPredictionSet {
    entries: BTreeMap<(String, TileKey), ClassProbs>,
}

impl ExternalPredictionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str, key: TileKey) -> Option<&ClassProbs> {
        self.entries.get(&(image_id.to_string(), key))
    }

    pub fn whole(&self, image_id: &str) -> Option<&ClassProbs> {
        self.get(image_id, TileKey::Whole)
    }

    /// Tile predictions `0..n` for an image, or `None` if any is missing.
    pub fn tiles(&self, image_id: &str, n: usize) -> Option<Vec<ClassProbs>> {
        (0..n).map(|t| self.get(image_id, TileKey::Tile(t)).copied()).collect()
    }

    /// Number of tile entries recorded for an image.
    pub fn tile_count(&self, image_id: &str) -> usize {
        self.entries
            .range((image_id.to_string(), TileKey::Whole)..)
            .take_while(|((id, _), _)| id == image_id)
            .filter(|((_, k), _)| matches!(k, TileKey::Tile(_)))
            .count()
    }

    pub fn image_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.keys().map(|(id, _)| id.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn insert(&mut self, image_id: impl Into<String>, key: TileKey, probs: ClassProbs) -> bool {
        self.entries.insert((image_id.into(), key), probs).is_none()
    }

    /// Parses JSON Lines; blank lines are skipped.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, ClassifierError> {
        let mut set = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| ClassifierError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionLine =
                serde_json::from_str(&line).map_err(|e| ClassifierError::MalformedLine {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            let key = TileKey::from_wire(rec.tile).ok_or_else(|| ClassifierError::MalformedLine {
                line: line_no,
                reason: format!("tile index {} (use -1 for the whole image)", rec.tile),
            })?;
            let probs = ClassProbs::renormalized(rec.probs, RENORMALIZE_TOLERANCE).ok_or_else(|| {
                ClassifierError::BadDistribution {
                    line: line_no,
                    probs: rec.probs.to_vec(),
                }
            })?;
            if !set.insert(rec.image_id.clone(), key, probs) {
                return Err(ClassifierError::DuplicateKey {
                    line: line_no,
                    image_id: rec.image_id,
                    tile: key,
                });
            }
        }
        Ok(set)
    }

    pub fn to_lines(&self) -> Vec<PredictionLine> {
        self.entries
            .iter()
            .map(|((id, key), p)| PredictionLine {
                image_id: id.clone(),
                tile: key.to_wire(),
                probs: p.as_array(),
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.to_lines() {
            out.push_str(&serde_json::to_string(&line).expect("prediction line serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn load_external_predictions(path: impl AsRef<Path>) -> Result<ExternalPredictionSet, ClassifierError> {
    let file = std::fs::File::open(path).map_err(|e| ClassifierError::Io(e.to_string()))?;
    ExternalPredictionSet::parse(std::io::BufReader::new(file))
}
