//! Patient-level triage: runs the imaging pipeline on submitted exams,
//! persists records, and computes risk assessments.
//!
//! Reads share a lock; every mutation goes through the single store writer,
//! so the event log is totally ordered. The imaging pipeline runs outside
//! the lock.

use std::fmt;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::{build_contamination_matrix, default_decision, majority_vote};
use crate::classifier::{forward, ClassLabel, ClassProbs, ModelParams};
use crate::imageprep::{decode_image, prepare, PrepOptions};
use crate::indicators::{
    age_score, comorbidity_score, fatality_indicator, infection_rate, temporal_from_rates, Age,
    Branch, Comorbidities, Disease, IndicatorError, InfectionSource, RiskAssessment,
    ScoringConfig,
};
use crate::store::{Event, ExamDecisions, ExamRecord, PatientRecord, RecordStore, StoreError};

/// Pipeline stage an exam submission failed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Decode,
    Prep,
    Classify,
    Aggregate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Decode => "decode",
            Self::Prep => "prep",
            Self::Classify => "classify",
            Self::Aggregate => "aggregate",
        })
    }
}

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("patient `{0}` has no exams")]
    NoExams(String),
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("no internal model loaded; submit external predictions instead")]
    ModelUnavailable,
    #[error("[{stage}] {message}")]
    Pipeline { stage: Stage, message: String },
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for TriageError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownPatient(id) => Self::UnknownPatient(id),
            other => Self::Store(other),
        }
    }
}

impl TriageError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Self::Pipeline { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

fn staged(stage: Stage) -> impl Fn(&dyn fmt::Display) -> TriageError {
    move |e| TriageError::Pipeline {
        stage,
        message: e.to_string(),
    }
}

/// Comorbidities as a named list or as bare counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComorbidityInput {
    List(Vec<Disease>),
    Counts(Comorbidities),
}

impl Default for ComorbidityInput {
    fn default() -> Self {
        Self::List(Vec::new())
    }
}

impl From<ComorbidityInput> for Comorbidities {
    fn from(c: ComorbidityInput) -> Self {
        match c {
            ComorbidityInput::List(l) => Comorbidities::from_list(l),
            ComorbidityInput::Counts(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierChoice {
    /// The loaded softmax model.
    Internal,
    /// Predictions computed elsewhere, tiles in row-major order.
    External {
        tiles: Vec<ClassProbs>,
        #[serde(default)]
        whole: Option<ClassProbs>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamOptions {
    #[serde(flatten)]
    pub preprocessing: PrepOptions,
    pub classifier: ClassifierChoice,
    /// Defaults to the submission time.
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

impl Default for ExamOptions {
    fn default() -> Self {
        Self {
            preprocessing: PrepOptions::default(),
            classifier: ClassifierChoice::Internal,
            timestamp: None,
        }
    }
}

/// In-memory adjustments for exploring alternative scenarios.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhatIf {
    pub age: Option<Age>,
    pub serious_delta: Option<i64>,
    pub moderate_delta: Option<i64>,
    /// Hypothetical virus tile count for the latest exam.
    pub infected: Option<usize>,
    /// Grid size to pair with `infected` when the patient has no exam.
    pub tiles: Option<usize>,
}

pub struct TriageService {
    store: RwLock<RecordStore>,
    scoring: ScoringConfig,
    model: Option<ModelParams>,
}

fn apply_delta(count: usize, delta: Option<i64>, what: &str) -> Result<usize, TriageError> {
    let Some(d) = delta else { return Ok(count) };
    let v = count as i64 + d;
    if v < 0 {
        return Err(TriageError::InvalidOverride(format!(
            "{what} count would become {v}"
        )));
    }
    Ok(v as usize)
}

impl TriageService {
    pub fn new(store: RecordStore, scoring: ScoringConfig, model: Option<ModelParams>) -> Self {
        Self {
            store: RwLock::new(store),
            scoring,
            model,
        }
    }

    pub fn scoring(&self) -> &ScoringConfig {
        &self.scoring
    }

    pub fn create_patient(
        &self,
        age: Age,
        comorbidities: Comorbidities,
    ) -> Result<PatientRecord, TriageError> {
        age_score(&age, &self.scoring.age_table)?;
        comorbidities.validate()?;
        let patient_id = uuid::Uuid::new_v4().to_string();
        let mut store = self.store.write();
        store.append(Event::PatientCreated {
            patient_id: patient_id.clone(),
            age,
            comorbidities,
            at: Utc::now(),
        })?;
        Ok(store.patient(&patient_id)?.clone())
    }

    pub fn patient(&self, id: &str) -> Result<PatientRecord, TriageError> {
        Ok(self.store.read().patient(id)?.clone())
    }

    /// SHA-256 of the current index.
    pub fn digest(&self) -> String {
        self.store.read().index().digest()
    }

    pub fn submit_exam(
        &self,
        patient_id: &str,
        image: &[u8],
        options: &ExamOptions,
    ) -> Result<ExamRecord, TriageError> {
        self.store.read().patient(patient_id)?;
        let image_ref = hex::encode(Sha256::digest(image));
        let img = decode_image(image, None, image_ref.clone()).map_err(|e| staged(Stage::Decode)(&e))?;
        let prep = &options.preprocessing;
        let (tiles, whole) = match &options.classifier {
            ClassifierChoice::Internal => {
                let model = self.model.as_ref().ok_or(TriageError::ModelUnavailable)?;
                let prepared = prepare(&img, prep).map_err(|e| staged(Stage::Prep)(&e))?;
                let classify = |i| forward(model, i).map_err(|e| staged(Stage::Classify)(&e));
                let tiles = prepared.tiles.iter().map(classify).collect::<Result<Vec<_>, _>>()?;
                (tiles, Some(classify(&prepared.whole)?))
            }
            ClassifierChoice::External { tiles, whole } => (tiles.clone(), *whole),
        };
        let cm = build_contamination_matrix(&tiles, prep.rows, prep.cols, image_ref.clone())
            .map_err(|e| staged(Stage::Aggregate)(&e))?;
        let decisions = ExamDecisions {
            majority_vote: majority_vote(&cm),
            default: default_decision(whole.as_ref(), Some(&cm))
                .map_err(|e| staged(Stage::Aggregate)(&e))?,
        };
        let mut exam = ExamRecord {
            exam_id: uuid::Uuid::new_v4().to_string(),
            timestamp: options.timestamp.unwrap_or_default(),
            image_ref,
            preprocessing: *prep,
            f: infection_rate(cm.virus_count, cm.len())?,
            contamination: cm,
            decisions,
            whole_probs: whole,
        };
        let mut store = self.store.write();
        // taken under the writer lock so default timestamps follow log order
        let now = Utc::now();
        if options.timestamp.is_none() {
            exam.timestamp = now;
        }
        store.put_image(image)?;
        store.append(Event::ExamAdded {
            patient_id: patient_id.to_string(),
            exam: Box::new(exam.clone()),
            at: now,
        })?;
        Ok(exam)
    }

    fn exam_rate(&self, exam: &ExamRecord, infected_override: Option<usize>) -> Result<f64, TriageError> {
        if let Some(n) = infected_override {
            return Ok(infection_rate(n, exam.tiles())?);
        }
        Ok(match self.scoring.infection_source {
            InfectionSource::TileCount => exam.f,
            InfectionSource::ClassProbability => {
                let probs = exam.whole_probs.or_else(|| {
                    ClassProbs::mean(exam.contamination.cells.iter().map(|c| &c.probs))
                });
                probs.map_or(0.0, |p| 100.0 * p.get(ClassLabel::Virus))
            }
        })
    }

    fn assess_record(&self, p: &PatientRecord, overrides: &WhatIf) -> Result<RiskAssessment, TriageError> {
        let cfg = &self.scoring;
        let age = overrides.age.as_ref().unwrap_or(&p.age);
        let s1 = age_score(age, &cfg.age_table)?;
        let mut comorbidities = p.comorbidities.clone();
        comorbidities.serious_count = apply_delta(comorbidities.serious_count, overrides.serious_delta, "serious")?;
        comorbidities.moderate_count = apply_delta(comorbidities.moderate_count, overrides.moderate_delta, "moderate")?;
        let s3 = comorbidity_score(&comorbidities, cfg.serious_penalty, cfg.moderate_penalty);
        if let (Some(n), Some(latest)) = (overrides.infected, p.exams.last()) {
            if n > latest.tiles() {
                return Err(TriageError::InvalidOverride(format!(
                    "infected tiles {n} exceed grid size {}",
                    latest.tiles()
                )));
            }
        }
        let (s2, branch) = match p.exams.as_slice() {
            [] => match (overrides.infected, overrides.tiles) {
                (Some(n), Some(t)) => (
                    infection_rate(n, t).map_err(|e| TriageError::InvalidOverride(e.to_string()))?,
                    Branch::Single,
                ),
                _ => return Err(TriageError::NoExams(p.patient_id.clone())),
            },
            [only] => (self.exam_rate(only, overrides.infected)?, Branch::Single),
            [.., prev, last] => {
                if prev.tiles() != last.tiles() {
                    return Err(IndicatorError::GridMismatch {
                        first: prev.tiles(),
                        second: last.tiles(),
                    }
                    .into());
                }
                let f1 = self.exam_rate(prev, None)?;
                let f2 = self.exam_rate(last, overrides.infected)?;
                temporal_from_rates(f1, f2, &cfg.temporal())
            }
        };
        let mut out = fatality_indicator(s1, s2, s3, cfg.threshold)?;
        out.branch = branch;
        Ok(out)
    }

    /// S1 from age, S3 from comorbidities, S2 from the latest exam (or the
    /// two-exam rule over the last two).
    pub fn assess_risk(&self, patient_id: &str) -> Result<RiskAssessment, TriageError> {
        let store = self.store.read();
        let p = store.patient(patient_id)?;
        if p.exams.is_empty() {
            return Err(TriageError::NoExams(patient_id.to_string()));
        }
        self.assess_record(p, &WhatIf::default())
    }

    /// Assessment with overrides applied to a copy; the store is untouched.
    pub fn what_if(&self, patient_id: &str, overrides: &WhatIf) -> Result<RiskAssessment, TriageError> {
        if let Some(age) = &overrides.age {
            age_score(age, &self.scoring.age_table)
                .map_err(|e| TriageError::InvalidOverride(e.to_string()))?;
        }
        let store = self.store.read();
        let p = store.patient(patient_id)?;
        self.assess_record(p, overrides)
    }
}
