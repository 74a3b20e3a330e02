//! Records a patient and two exams in an event-log store, reopens it and
//! checks that replay rebuilds the same state.
//!
//! ```bash
//! cargo run --example triage_store
//! ```

use pneumoscan::indicators::{Age, Comorbidities, ScoringConfig};
use pneumoscan::store::{RecordStore, EVENT_LOG};
use pneumoscan::triage::{ClassifierChoice, ExamOptions, TriageService, WhatIf};
use pneumoscan::{ClassLabel, ClassProbs, GrayImage};

fn exam(virus: usize, day: u32) -> ExamOptions {
    let tiles = (0..9)
        .map(|k| ClassProbs::peaked(if k < virus { ClassLabel::Virus } else { ClassLabel::Normal }, 0.8))
        .collect();
    ExamOptions {
        classifier: ClassifierChoice::External { tiles, whole: None },
        timestamp: Some(format!("2020-03-{day:02}T09:00:00Z").parse().unwrap()),
        ..ExamOptions::default()
    }
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let image = GrayImage::filled("scan", 64, 64, 100)?.to_png()?;

    let svc = TriageService::new(RecordStore::open(dir.path())?, ScoringConfig::default(), None);
    let p = svc.create_patient(Age::Years(67.0), Comorbidities::counts(0, 2))?;
    svc.submit_exam(&p.patient_id, &image, &exam(2, 1))?;
    svc.submit_exam(&p.patient_id, &image, &exam(7, 4))?;
    let risk = svc.assess_risk(&p.patient_id)?;
    println!("S1 {} S2 {:.2} S3 {} F {:.4} ({}, {})", risk.s1, risk.s2, risk.s3, risk.f, risk.branch, risk.verdict.as_str());

    let what_if = svc.what_if(&p.patient_id, &WhatIf { infected: Some(3), ..WhatIf::default() })?;
    println!("if the latest exam had 3 viral tiles: F {:.4} ({})", what_if.f, what_if.branch);

    let digest = svc.digest();
    drop(svc);
    for line in std::fs::read_to_string(dir.path().join(EVENT_LOG))?.lines() {
        let v: serde_json::Value = serde_json::from_str(line)?;
        println!("log: {}", v["event"]);
    }
    let reopened = TriageService::new(RecordStore::open(dir.path())?, ScoringConfig::default(), None);
    println!("replayed index digest matches: {}", reopened.digest() == digest);
    Ok(())
}
