//! Append-only JSON Lines event log with a replayed in-memory index.
//!
//! Every mutation is one line in `events.jsonl`. Opening a store replays the
//! log from empty; the replayed index is the only state. Exam images are
//! kept by SHA-256 content hash under `images/`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::{ContaminationMatrix, ImageDecision};
use crate::classifier::ClassProbs;
use crate::imageprep::PrepOptions;
use crate::indicators::{Age, Comorbidities};

pub const EVENT_LOG: &str = "events.jsonl";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("event log corrupt at line {line}: {reason}")]
    StoreCorrupt { line: usize, reason: String },
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("patient `{0}` already exists")]
    DuplicatePatient(String),
    #[error("exam at {new} is not after the last exam at {last}")]
    NonChronological {
        last: DateTime<Utc>,
        new: DateTime<Utc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamDecisions {
    pub majority_vote: ImageDecision,
    pub default: ImageDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub exam_id: String,
    pub timestamp: DateTime<Utc>,
    /// SHA-256 of the uploaded image bytes.
    pub image_ref: String,
    pub preprocessing: PrepOptions,
    pub contamination: ContaminationMatrix,
    pub decisions: ExamDecisions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whole_probs: Option<ClassProbs>,
    /// Infection rate in percent, `(100 / n) * N`.
    pub f: f64,
}

impl ExamRecord {
    pub fn tiles(&self) -> usize {
        self.contamination.len()
    }

    pub fn infected(&self) -> usize {
        self.contamination.virus_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: Age,
    pub comorbidities: Comorbidities,
    pub exams: Vec<ExamRecord>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    PatientCreated {
        patient_id: String,
        age: Age,
        comorbidities: Comorbidities,
        at: DateTime<Utc>,
    },
    ExamAdded {
        patient_id: String,
        exam: Box<ExamRecord>,
        at: DateTime<Utc>,
    },
}

/// Current state derived from the log.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Index {
    patients: BTreeMap<String, PatientRecord>,
}

impl Index {
    pub fn get(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.get(id)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.values()
    }

    /// Checks an event against the current state without applying it.
    pub fn check(&self, event: &Event) -> Result<(), StoreError> {
        match event {
            Event::PatientCreated { patient_id, .. } => {
                if self.patients.contains_key(patient_id) {
                    return Err(StoreError::DuplicatePatient(patient_id.clone()));
                }
            }
            Event::ExamAdded { patient_id, exam, .. } => {
                let p = self
                    .patients
                    .get(patient_id)
                    .ok_or_else(|| StoreError::UnknownPatient(patient_id.clone()))?;
                if let Some(last) = p.exams.last() {
                    if exam.timestamp <= last.timestamp {
                        return Err(StoreError::NonChronological {
                            last: last.timestamp,
                            new: exam.timestamp,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), StoreError> {
        self.check(event)?;
        match event {
            Event::PatientCreated {
                patient_id,
                age,
                comorbidities,
                at,
            } => {
                self.patients.insert(
                    patient_id.clone(),
                    PatientRecord {
                        patient_id: patient_id.clone(),
                        age: age.clone(),
                        comorbidities: comorbidities.clone(),
                        exams: Vec::new(),
                        created_at: *at,
                        updated_at: *at,
                    },
                );
            }
            Event::ExamAdded { patient_id, exam, at } => {
                let p = self.patients.get_mut(patient_id).expect("checked");
                p.exams.push((**exam).clone());
                p.updated_at = *at;
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("index serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub struct RecordStore {
    dir: PathBuf,
    log: File,
    index: Index,
}

impl RecordStore {
    /// Opens (creating if needed) a store directory and replays its log.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let unavailable = |e: std::io::Error| StoreError::StoreUnavailable(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir.join(IMAGE_DIR)).map_err(unavailable)?;
        let path = dir.join(EVENT_LOG);
        let index = if path.exists() {
            replay(&path)?
        } else {
            Index::default()
        };
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(unavailable)?;
        Ok(Self { dir, log, index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn patient(&self, id: &str) -> Result<&PatientRecord, StoreError> {
        self.index
            .get(id)
            .ok_or_else(|| StoreError::UnknownPatient(id.to_string()))
    }

    /// Validates, durably appends, then applies an event.
    pub fn append(&mut self, event: Event) -> Result<(), StoreError> {
        self.index.check(&event)?;
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        let io = |e: std::io::Error| StoreError::StoreUnavailable(e.to_string());
        self.log.write_all(line.as_bytes()).map_err(io)?;
        self.log.sync_data().map_err(io)?;
        self.index.apply(&event)
    }

    /// Stores image bytes by content hash and returns the hash.
    pub fn put_image(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let hash = hex::encode(Sha256::digest(bytes));
        let path = self.dir.join(IMAGE_DIR).join(&hash);
        if !path.exists() {
            std::fs::write(&path, bytes).map_err(|e| StoreError::StoreUnavailable(e.to_string()))?;
        }
        Ok(hash)
    }

    pub fn image_path(&self, hash: &str) -> PathBuf {
        self.dir.join(IMAGE_DIR).join(hash)
    }
}

/// Rebuilds the index from a log file.
pub fn replay(path: &Path) -> Result<Index, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::StoreUnavailable(e.to_string()))?;
    let mut index = Index::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let corrupt = |reason: String| StoreError::StoreCorrupt { line: i + 1, reason };
        let line = line.map_err(|e| corrupt(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        index.apply(&event).map_err(|e| corrupt(e.to_string()))?;
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{build_contamination_matrix, default_decision, majority_vote};
    use crate::classifier::{ClassLabel, ClassProbs};
    use chrono::TimeZone;

    fn created(id: &str) -> Event {
        Event::PatientCreated {
            patient_id: id.into(),
            age: Age::Years(82.0),
            comorbidities: Comorbidities::counts(0, 1),
            at: Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).unwrap(),
        }
    }

    fn exam(id: &str, day: u32) -> Event {
        let mut probs = vec![ClassProbs::peaked(ClassLabel::Normal, 0.8); 9];
        probs[0] = ClassProbs::peaked(ClassLabel::Virus, 0.8);
        let cm = build_contamination_matrix(&probs, 3, 3, "img").unwrap();
        let ts = Utc.with_ymd_and_hms(2020, 3, day, 0, 0, 0).unwrap();
        Event::ExamAdded {
            patient_id: id.into(),
            at: ts,
            exam: Box::new(ExamRecord {
                exam_id: format!("e{day}"),
                timestamp: ts,
                image_ref: "00".into(),
                preprocessing: PrepOptions::default(),
                decisions: ExamDecisions {
                    majority_vote: majority_vote(&cm),
                    default: default_decision(None, Some(&cm)).unwrap(),
                },
                f: cm.infection_rate(),
                contamination: cm,
                whole_probs: None,
            }),
        }
    }

    #[test]
    fn replay_reproduces_index() {
        let dir = tempfile::tempdir().unwrap();
        let digest = {
            let mut s = RecordStore::open(dir.path()).unwrap();
            s.append(created("p1")).unwrap();
            s.append(exam("p1", 2)).unwrap();
            s.append(created("p2")).unwrap();
            s.index().digest()
        };
        let s = RecordStore::open(dir.path()).unwrap();
        assert_eq!(s.index().digest(), digest);
        assert_eq!(s.patient("p1").unwrap().exams.len(), 1);
    }

    #[test]
    fn rejected_events_are_not_logged() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = RecordStore::open(dir.path()).unwrap();
        s.append(created("p1")).unwrap();
        s.append(exam("p1", 5)).unwrap();
        assert!(matches!(s.append(exam("p1", 4)), Err(StoreError::NonChronological { .. })));
        assert!(matches!(s.append(exam("p1", 5)), Err(StoreError::NonChronological { .. })));
        assert!(matches!(s.append(exam("nobody", 6)), Err(StoreError::UnknownPatient(_))));
        assert!(matches!(s.append(created("p1")), Err(StoreError::DuplicatePatient(_))));
        let lines = std::fs::read_to_string(dir.path().join(EVENT_LOG)).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    #[test]
    fn corrupt_log_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(EVENT_LOG), "{\"event\":\"nonsense\"}\n").unwrap();
        assert!(matches!(
            RecordStore::open(dir.path()),
            Err(StoreError::StoreCorrupt { line: 1, .. })
        ));
    }

    #[test]
    fn images_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let s = RecordStore::open(dir.path()).unwrap();
        let a = s.put_image(b"abc").unwrap();
        assert_eq!(a, s.put_image(b"abc").unwrap());
        assert_eq!(a, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(s.image_path(&a).exists());
    }
}
