//! Dataset manifests, the synthetic fixture, and the metrics harness.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::aggregation::{
    build_contamination_matrix, default_decision, majority_vote, AggregationError, ImageDecision,
    Strategy,
};
use crate::classifier::{ClassLabel, ClassifierError, ExternalPredictionSet};
use crate::imageprep::{GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: duplicate path `{path}`")]
    DuplicatePath { line: usize, path: String },
    #[error("line {line}: bad label `{value}` (expected bacteria|normal|virus|unknown)")]
    BadLabel { line: usize, value: String },
    #[error("line {line}: bad split `{value}` (expected train|test|blind)")]
    BadSplit { line: usize, value: String },
    #[error("manifest csv: {0}")]
    Csv(String),
    #[error("empty input")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("class {0} has no test samples")]
    ZeroRow(ClassLabel),
    #[error("unknown report format `{0}` (expected text|json|csv)")]
    BadFormat(String),
    #[error("fixture needs at least one image per class")]
    EmptyFixture,
    #[error("io failure: {0}")]
    IoFailure(String),
    #[error("no predictions for image `{0}`")]
    MissingPrediction(String),
    #[error("sample `{0}` is unlabeled")]
    Unlabeled(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Blind,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
            Self::Blind => "blind",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "blind" => Ok(Self::Blind),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    /// `None` for `unknown`.
    pub label: Option<ClassLabel>,
    pub split: Split,
}

impl ManifestEntry {
    /// Key used to look up predictions: the file stem of the path.
    pub fn image_id(&self) -> String {
        Path::new(&self.path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.path)
            .to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    base_dir: PathBuf,
}

#[derive(Deserialize, Serialize)]
struct ManifestRow {
    path: String,
    label: String,
    split: String,
}

fn label_str(label: Option<ClassLabel>) -> &'static str {
    label.map_or("unknown", ClassLabel::as_str)
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.path.clone()) {
                return Err(EvalError::DuplicatePath {
                    line: i + 2,
                    path: e.path.clone(),
                });
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Entry counts keyed by `(split, label)`; `None` label is `unknown`.
    pub fn counts(&self) -> BTreeMap<(Split, Option<ClassLabel>), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.split, e.label)).or_insert(0) += 1;
        }
        out
    }

    pub fn count_split(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Parses `path,label,split` CSV. Paths resolve relative to `base_dir`.
    pub fn parse<R: std::io::Read>(reader: R, base_dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| EvalError::Csv(e.to_string()))?;
            let label = match row.label.to_ascii_lowercase().as_str() {
                "unknown" => None,
                "bacteria" => Some(ClassLabel::Bacteria),
                "normal" => Some(ClassLabel::Normal),
                "virus" => Some(ClassLabel::Virus),
                _ => {
                    return Err(EvalError::BadLabel {
                        line,
                        value: row.label,
                    })
                }
            };
            let split = row
                .split
                .parse()
                .map_err(|value| EvalError::BadSplit { line, value })?;
            entries.push(ManifestEntry {
                path: row.path,
                label,
                split,
            });
        }
        Self::new(entries, base_dir)
    }

    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            wtr.serialize(ManifestRow {
                path: e.path.clone(),
                label: label_str(e.label).to_string(),
                split: e.split.as_str().to_string(),
            })
            .expect("in-memory csv write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8 csv")
    }

    /// Loads the labeled images of one split.
    pub fn load_labeled(&self, split: Split) -> Result<Vec<(GrayImage, ClassLabel)>, EvalError> {
        self.split(split)
            .map(|e| {
                let label = e.label.ok_or_else(|| EvalError::Unlabeled(e.path.clone()))?;
                let img = crate::imageprep::load_image(self.resolve(e))?.with_id(e.image_id());
                Ok((img, label))
            })
            .collect()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| EvalError::IoFailure(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(file, base)
}

/// Side length of fixture images.
pub const FIXTURE_SIDE: usize = 64;

fn add_blob(canvas: &mut [f64], cx: f64, cy: f64, sigma: f64, amplitude: f64) {
    let two_s2 = 2.0 * sigma * sigma;
    for y in 0..FIXTURE_SIDE {
        for x in 0..FIXTURE_SIDE {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            canvas[y * FIXTURE_SIDE + x] += amplitude * (-d2 / two_s2).exp();
        }
    }
}

/// Renders one synthetic image.
///
/// Normal: dim vertical gradient. Bacteria: one bright compact blob in the
/// left field. Virus: five diffuse blobs spread over both fields. All carry
/// seeded noise.
pub fn fixture_image(label: ClassLabel, rng: &mut impl Rng, id: impl Into<String>) -> GrayImage {
    let side = FIXTURE_SIDE as f64;
    let mut canvas: Vec<f64> = (0..FIXTURE_SIDE * FIXTURE_SIDE)
        .map(|i| 20.0 + 30.0 * (i / FIXTURE_SIDE) as f64 / (side - 1.0))
        .collect();
    let mut jitter = |r: f64| rng.random_range(-r..=r);
    match label {
        ClassLabel::Normal => {}
        ClassLabel::Bacteria => {
            add_blob(&mut canvas, 20.0 + jitter(4.0), 30.0 + jitter(4.0), 5.0, 190.0);
        }
        ClassLabel::Virus => {
            for (cx, cy) in [(16.0, 18.0), (46.0, 18.0), (16.0, 44.0), (46.0, 44.0), (32.0, 31.0)] {
                add_blob(&mut canvas, cx + jitter(3.0), cy + jitter(3.0), 8.0, 85.0);
            }
        }
    }
    let pixels = canvas
        .into_iter()
        .map(|v| (v + rng.random_range(-12.0..=12.0)).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(id, FIXTURE_SIDE, FIXTURE_SIDE, pixels).expect("fixture dimensions")
}

/// Per-image seed derived from the fixture seed, class and index.
fn fixture_seed(seed: u64, label: ClassLabel, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((label.index() as u64) << 32)
        ^ index as u64
}

/// Writes `per_class` PNG images per class under `out_dir/<class>/` and a
/// `manifest.csv`. The first 80 % (floored) of each class is `train`.
pub fn generate_fixture(out_dir: impl AsRef<Path>, per_class: usize, seed: u64) -> Result<DatasetManifest, EvalError> {
    if per_class == 0 {
        return Err(EvalError::EmptyFixture);
    }
    let out_dir = out_dir.as_ref();
    let io = |e: std::io::Error| EvalError::IoFailure(e.to_string());
    let n_train = per_class * 4 / 5;
    let mut entries = Vec::with_capacity(per_class * 3);
    for label in ClassLabel::ALL {
        std::fs::create_dir_all(out_dir.join(label.as_str())).map_err(io)?;
        for i in 0..per_class {
            let id = format!("{}_{i:04}", label.as_str());
            let mut rng = ChaCha8Rng::seed_from_u64(fixture_seed(seed, label, i));
            let img = fixture_image(label, &mut rng, id.clone());
            let rel = format!("{}/{id}.png", label.as_str());
            img.save(out_dir.join(&rel))
                .map_err(|e| EvalError::IoFailure(e.to_string()))?;
            entries.push(ManifestEntry {
                path: rel,
                label: Some(label),
                split: if i < n_train { Split::Train } else { Split::Test },
            });
        }
    }
    let manifest = DatasetManifest::new(entries, out_dir)?;
    std::fs::write(out_dir.join("manifest.csv"), manifest.to_csv()).map_err(io)?;
    Ok(manifest)
}

/// 3x3 counts, rows actual, columns predicted, canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix3 {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix3 {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, label: ClassLabel) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    pub fn is_balanced(&self) -> bool {
        let r = self.row_sum(ClassLabel::Bacteria);
        ClassLabel::ALL.iter().all(|&l| self.row_sum(l) == r)
    }
}

pub fn confusion(pairs: &[(ClassLabel, ClassLabel)]) -> Result<ConfusionMatrix3, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix3::default();
    for &(actual, predicted) in pairs {
        cm.counts[actual.index()][predicted.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub dataset: String,
    pub strategy: String,
    pub confusion: ConfusionMatrix3,
    /// Per-class recall in percent, canonical order.
    pub per_class_accuracy: [f64; 3],
    /// trace / total, percent.
    pub average_accuracy: f64,
    /// Unweighted mean of the per-class accuracies, percent.
    pub macro_accuracy: f64,
}

impl EvalReport {
    pub fn accuracy(&self, label: ClassLabel) -> f64 {
        self.per_class_accuracy[label.index()]
    }

    pub fn labeled(mut self, dataset: impl Into<String>, strategy: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self.strategy = strategy.into();
        self
    }
}

pub fn metrics(cm: &ConfusionMatrix3) -> Result<EvalReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut per_class = [0.0; 3];
    for label in ClassLabel::ALL {
        let row = cm.row_sum(label);
        if row == 0 {
            return Err(EvalError::ZeroRow(label));
        }
        per_class[label.index()] = cm.counts[label.index()][label.index()] as f64 / row as f64 * 100.0;
    }
    Ok(EvalReport {
        dataset: String::new(),
        strategy: String::new(),
        confusion: *cm,
        per_class_accuracy: per_class,
        average_accuracy: cm.trace() as f64 / total as f64 * 100.0,
        macro_accuracy: per_class.iter().sum::<f64>() / 3.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlindSetReport {
    pub total: usize,
    pub virus_rate: f64,
    pub pneumonia_rate: f64,
    pub strategy: String,
}

pub fn blind_sensitivity(decisions: &[ImageDecision]) -> Result<BlindSetReport, EvalError> {
    if decisions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = decisions.len() as f64;
    let virus = decisions.iter().filter(|d| d.label == ClassLabel::Virus).count() as f64;
    let pneumonia = decisions.iter().filter(|d| d.pneumonia).count() as f64;
    Ok(BlindSetReport {
        total: decisions.len(),
        virus_rate: virus / n * 100.0,
        pneumonia_rate: pneumonia / n * 100.0,
        strategy: decisions[0].strategy.as_str().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(EvalError::BadFormat(other.to_string())),
        }
    }
}

fn r2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Serializes a report. Percentages are rounded to two decimals.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let per_class: serde_json::Map<String, serde_json::Value> = ClassLabel::ALL
                .iter()
                .map(|&l| (l.as_str().to_string(), json!(r2(report.accuracy(l)))))
                .collect();
            let doc = json!({
                "dataset": report.dataset,
                "strategy": report.strategy,
                "confusion": report.confusion.counts,
                "per_class": per_class,
                "average": r2(report.average_accuracy),
                "macro_average": r2(report.macro_accuracy),
            });
            serde_json::to_string_pretty(&doc).expect("report serializes")
        }
        ReportFormat::Csv => {
            let mut out = String::from("class,accuracy\n");
            for l in ClassLabel::ALL {
                let _ = writeln!(out, "{},{:.2}", l.as_str(), report.accuracy(l));
            }
            out
        }
        ReportFormat::Text => TextReport(report).to_string(),
    }
}

struct TextReport<'a>(&'a EvalReport);

impl fmt::Display for TextReport<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.0;
        let strategy = if r.strategy.is_empty() { "-" } else { &r.strategy };
        writeln!(f, "Accuracy (%) on {}", if r.dataset.is_empty() { "-" } else { &r.dataset })?;
        writeln!(f, "{:<24}{:>10}{:>10}{:>10}{:>10}", "strategy", "Bacteria", "Virus", "Normal", "Average")?;
        writeln!(
            f,
            "{:<24}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
            strategy,
            r.accuracy(ClassLabel::Bacteria),
            r.accuracy(ClassLabel::Virus),
            r.accuracy(ClassLabel::Normal),
            r.average_accuracy
        )?;
        writeln!(f)?;
        writeln!(f, "Confusion matrix (rows actual, columns predicted)")?;
        writeln!(f, "{:<12}{:>10}{:>10}{:>10}", "", "Bacteria", "Normal", "Virus")?;
        for l in ClassLabel::ALL {
            let row = r.confusion.counts[l.index()];
            writeln!(f, "{:<12}{:>10}{:>10}{:>10}", capitalized(l), row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

fn capitalized(l: ClassLabel) -> &'static str {
    match l {
        ClassLabel::Bacteria => "Bacteria",
        ClassLabel::Normal => "Normal",
        ClassLabel::Virus => "Virus",
    }
}

pub fn render_blind(report: &BlindSetReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(&json!({
            "total": report.total,
            "strategy": report.strategy,
            "virus": r2(report.virus_rate),
            "pneumonia": r2(report.pneumonia_rate),
        }))
        .expect("report serializes"),
        ReportFormat::Csv => format!(
            "output,sensitivity\nvirus,{:.2}\npneumonia,{:.2}\n",
            report.virus_rate, report.pneumonia_rate
        ),
        ReportFormat::Text => format!(
            "Sensitivity (%) on blind set of {} images\n{:<24}{:>10}{:>10}\n{:<24}{:>10.2}{:>10.2}\n",
            report.total, "strategy", "Virus", "Pneumonia", report.strategy, report.virus_rate, report.pneumonia_rate
        ),
    }
}

/// How whole-image labels are obtained from a prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionMode {
    /// Plurality over the tile labels.
    Majority,
    /// Whole-image prediction if present, else mean tile distribution.
    Default,
    /// Whole-image prediction only.
    Whole,
}

impl FromStr for DecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" => Ok(Self::Majority),
            "default" => Ok(Self::Default),
            "whole" => Ok(Self::Whole),
            other => Err(format!("unknown strategy `{other}` (expected majority|default|whole)")),
        }
    }
}

impl DecisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Majority => "majority voting",
            Self::Default => "by default",
            Self::Whole => "whole image",
        }
    }
}

/// Decides one image from a prediction set. Tile grids are assumed square
/// (`rows = cols = sqrt(n)`), falling back to a single row.
pub fn decide(preds: &ExternalPredictionSet, image_id: &str, mode: DecisionMode) -> Result<ImageDecision, EvalError> {
    let missing = || EvalError::MissingPrediction(image_id.to_string());
    let n = preds.tile_count(image_id);
    let cm = if n > 0 {
        let tiles = preds.tiles(image_id, n).ok_or_else(missing)?;
        let side = (n as f64).sqrt().round() as usize;
        let (rows, cols) = if side * side == n { (side, side) } else { (1, n) };
        Some(build_contamination_matrix(&tiles, rows, cols, image_id)?)
    } else {
        None
    };
    let whole = preds.whole(image_id);
    let mut decision = match mode {
        DecisionMode::Majority => majority_vote(cm.as_ref().ok_or_else(missing)?),
        DecisionMode::Default => default_decision(whole, cm.as_ref()).map_err(|_| missing())?,
        DecisionMode::Whole => default_decision(Some(whole.ok_or_else(missing)?), None)?,
    };
    decision.image_id = image_id.to_string();
    if mode == DecisionMode::Whole {
        decision.strategy = Strategy::Default;
    }
    Ok(decision)
}

/// Result of scoring a manifest against a prediction set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub test: Option<EvalReport>,
    pub blind: Option<BlindSetReport>,
}

/// Scores the `test` split (confusion matrix) and the `blind` split
/// (sensitivity) of a manifest.
pub fn evaluate(manifest: &DatasetManifest, preds: &ExternalPredictionSet, mode: DecisionMode) -> Result<Evaluation, EvalError> {
    let mut pairs = Vec::new();
    for e in manifest.split(Split::Test) {
        let actual = e.label.ok_or_else(|| EvalError::Unlabeled(e.path.clone()))?;
        pairs.push((actual, decide(preds, &e.image_id(), mode)?.label));
    }
    let blind: Vec<ImageDecision> = manifest
        .split(Split::Blind)
        .map(|e| decide(preds, &e.image_id(), mode))
        .collect::<Result<_, _>>()?;
    let test = if pairs.is_empty() {
        None
    } else {
        Some(metrics(&confusion(&pairs)?)?.labeled("test", mode.as_str()))
    };
    let blind = if blind.is_empty() {
        None
    } else {
        let mut b = blind_sensitivity(&blind)?;
        b.strategy = mode.as_str().to_string();
        Some(b)
    };
    Ok(Evaluation { test, blind })
}
