//! Worked indicator scenarios: nine synthetic patients scored with the
//! default configuration, and five real two-exam image pairs run through
//! the kinetics rule.

use serde::Serialize;

use crate::indicators::{
    assess, Age, Branch, Comorbidities, ExamObservation, IndicatorError, RiskInputs,
    ScoringConfig, TemporalParams, Verdict, temporal_infection_rate,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PatientScenario {
    pub patient: usize,
    pub age: Age,
    pub infected: usize,
    pub tiles: usize,
    pub serious: usize,
    pub moderate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePairScenario {
    /// Which exams of the patient's series were compared.
    pub exams: &'static str,
    pub first_infected: usize,
    pub elapsed_days: i64,
    pub second_infected: usize,
    pub tiles: usize,
}

pub fn patients() -> Vec<PatientScenario> {
    let rows: [(Age, usize, usize, usize); 9] = [
        (Age::Years(82.0), 3, 0, 1),
        ("50-59".into(), 4, 0, 4),
        ("70-79".into(), 1, 1, 0),
        (Age::Years(82.0), 1, 1, 0),
        ("30-39".into(), 5, 1, 0),
        ("10-19".into(), 7, 1, 0),
        ("10-19".into(), 4, 0, 0),
        ("50-59".into(), 2, 0, 4),
        ("40-49".into(), 3, 0, 1),
    ];
    rows.into_iter()
        .enumerate()
        .map(|(i, (age, infected, serious, moderate))| PatientScenario {
            patient: i + 1,
            age,
            infected,
            tiles: 9,
            serious,
            moderate,
        })
        .collect()
}

pub fn image_pairs() -> Vec<ImagePairScenario> {
    let rows = [
        ("1,3", 9, 7, 9),
        ("1,2", 1, 5, 2),
        ("1,3", 5, 8, 5),
        ("1,2", 6, 1, 9),
        ("1,2", 7, 4, 8),
    ];
    rows.into_iter()
        .map(|(exams, a, days, b)| ImagePairScenario {
            exams,
            first_infected: a,
            elapsed_days: days,
            second_infected: b,
            tiles: 9,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientOutcome {
    pub table: &'static str,
    pub patient: usize,
    pub age: String,
    pub infected: String,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub f: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOutcome {
    pub table: &'static str,
    pub pair: usize,
    pub exams: &'static str,
    pub f_t1: f64,
    pub f_t2: f64,
    pub elapsed_days: i64,
    pub branch: Branch,
    pub s2: f64,
}

pub fn run_patients(cfg: &ScoringConfig) -> Result<Vec<PatientOutcome>, IndicatorError> {
    patients()
        .into_iter()
        .map(|p| {
            let inputs = RiskInputs {
                age: p.age.clone(),
                comorbidities: Comorbidities::counts(p.serious, p.moderate),
                exams: vec![ExamObservation::new(0, p.infected, p.tiles)?],
            };
            let r = assess(&inputs, cfg)?;
            Ok(PatientOutcome {
                table: "patients",
                patient: p.patient,
                age: p.age.to_string(),
                infected: format!("{}/{}", p.infected, p.tiles),
                s1: r.s1,
                s2: r.s2,
                s3: r.s3,
                f: r.f,
                verdict: r.verdict,
            })
        })
        .collect()
}

pub fn run_pairs(params: &TemporalParams) -> Result<Vec<PairOutcome>, IndicatorError> {
    image_pairs()
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let first = ExamObservation::new(0, s.first_infected, s.tiles)?;
            let second = ExamObservation::new(s.elapsed_days, s.second_infected, s.tiles)?;
            let (s2, branch) = temporal_infection_rate(&first, &second, params)?;
            Ok(PairOutcome {
                table: "image_pairs",
                pair: i + 1,
                exams: s.exams,
                f_t1: first.rate(),
                f_t2: second.rate(),
                elapsed_days: s.elapsed_days,
                branch,
                s2,
            })
        })
        .collect()
}
