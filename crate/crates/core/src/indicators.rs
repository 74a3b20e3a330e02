//! Health indicators: age score S1, infection rate S2 (single exam and
//! two-exam kinetics), comorbidity score S3, and the fatality indicator
//! `F = (S1 + S2 + S3) / T`.
//!
//! All weights live in [`ScoringConfig`]. Defaults: nine-bracket age table,
//! serious 100 / moderate 10, T = 200, δ = 20, ±20 % bonus/malus.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attached to every assessment leaving the library.
pub const DISCLAIMER: &str = "Research prototype for screening support. Scores are indicative only and are not a clinical diagnosis.";

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("age must be non-negative (got {0})")]
    NegativeAge(f64),
    #[error("unknown age bracket `{0}`")]
    UnknownBracket(String),
    #[error("invalid tile counts: N={infected}, n={tiles}")]
    BadCounts { infected: usize, tiles: usize },
    #[error("critical threshold must be positive (got {0})")]
    BadThreshold(f64),
    #[error("exam at t={second} does not follow exam at t={first}")]
    NonChronological { first: i64, second: i64 },
    #[error("exams use different grids (n={first} vs n={second})")]
    GridMismatch { first: usize, second: usize },
    #[error("invalid score table: {0}")]
    BadTable(String),
    #[error("invalid comorbidities: {0}")]
    BadComorbidities(String),
    #[error("scores must be non-negative (got {0})")]
    NegativeScore(f64),
    #[error("config error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeBracket {
    pub min_age: u32,
    /// Inclusive upper bound; `None` for the open top bracket.
    pub max_age: Option<u32>,
    /// Reference fatality risk ratio in percent.
    pub fatality_risk_pct: f64,
    pub score: f64,
}

impl AgeBracket {
    pub fn contains(&self, age: f64) -> bool {
        age >= f64::from(self.min_age) && self.max_age.is_none_or(|m| age < f64::from(m) + 1.0)
    }

    pub fn label(&self) -> String {
        match self.max_age {
            Some(max) => format!("{}-{}", self.min_age, max),
            None => format!(">={}", self.min_age),
        }
    }
}

/// Age brackets in ascending order, partitioning `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AgeBracket>", into = "Vec<AgeBracket>")]
pub struct AgeScoreTable {
    brackets: Vec<AgeBracket>,
}

impl AgeScoreTable {
    pub fn new(mut brackets: Vec<AgeBracket>) -> Result<Self, IndicatorError> {
        brackets.sort_by_key(|b| b.min_age);
        let bad = |m: String| Err(IndicatorError::BadTable(m));
        match brackets.first() {
            None => return bad("empty table".into()),
            Some(b) if b.min_age != 0 => return bad("first bracket must start at 0".into()),
            _ => {}
        }
        for pair in brackets.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            match lo.max_age {
                Some(m) if m + 1 == hi.min_age => {}
                _ => return bad(format!("gap or overlap between {} and {}", lo.label(), hi.label())),
            }
            if hi.score <= lo.score {
                return bad(format!("score must increase from {} to {}", lo.label(), hi.label()));
            }
        }
        if brackets.last().is_some_and(|b| b.max_age.is_some()) {
            return bad("last bracket must be open-ended".into());
        }
        if let Some(b) = brackets
            .iter()
            .find(|b| !b.score.is_finite() || b.score < 0.0 || b.max_age.is_some_and(|m| m < b.min_age))
        {
            return bad(format!("invalid bracket {}", b.label()));
        }
        Ok(Self { brackets })
    }

    pub fn brackets(&self) -> &[AgeBracket] {
        &self.brackets
    }

    pub fn bracket_for(&self, age: f64) -> Result<&AgeBracket, IndicatorError> {
        if age.is_nan() || age < 0.0 {
            return Err(IndicatorError::NegativeAge(age));
        }
        Ok(self
            .brackets
            .iter()
            .find(|b| b.contains(age))
            .expect("table partitions [0, inf)"))
    }

    /// Looks up a bracket written as `"50-59"`, `">=80"`, `"≥80"` or `"80+"`.
    pub fn bracket_by_label(&self, label: &str) -> Result<&AgeBracket, IndicatorError> {
        let unknown = || IndicatorError::UnknownBracket(label.to_string());
        let s = label.trim();
        let open = s
            .strip_prefix(">=")
            .or_else(|| s.strip_prefix('≥'))
            .or_else(|| s.strip_suffix('+'));
        let (min, max) = match open {
            Some(rest) => (rest.trim().parse::<u32>().map_err(|_| unknown())?, None),
            None => {
                let (a, b) = s.split_once('-').ok_or_else(unknown)?;
                let a = a.trim().parse::<u32>().map_err(|_| unknown())?;
                let b = b.trim().parse::<u32>().map_err(|_| unknown())?;
                (a, Some(b))
            }
        };
        self.brackets
            .iter()
            .find(|b| b.min_age == min && b.max_age == max)
            .ok_or_else(unknown)
    }
}

impl Default for AgeScoreTable {
    fn default() -> Self {
        let rows: [(u32, Option<u32>, f64, f64); 9] = [
            (0, Some(9), 0.01, 0.05),
            (10, Some(19), 0.02, 0.1),
            (20, Some(29), 0.09, 0.5),
            (30, Some(39), 0.18, 1.0),
            (40, Some(49), 0.4, 2.2),
            (50, Some(59), 1.3, 7.2),
            (60, Some(69), 4.6, 25.5),
            (70, Some(79), 9.8, 54.4),
            (80, None, 18.0, 100.0),
        ];
        Self::new(
            rows.iter()
                .map(|&(min_age, max_age, fatality_risk_pct, score)| AgeBracket {
                    min_age,
                    max_age,
                    fatality_risk_pct,
                    score,
                })
                .collect(),
        )
        .expect("default age table is valid")
    }
}

impl TryFrom<Vec<AgeBracket>> for AgeScoreTable {
    type Error = IndicatorError;

    fn try_from(v: Vec<AgeBracket>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<AgeScoreTable> for Vec<AgeBracket> {
    fn from(t: AgeScoreTable) -> Self {
        t.brackets
    }
}

/// Patient age, either exact or as a bracket label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Age {
    Years(f64),
    Bracket(String),
}

impl Age {
    pub fn validate(&self, table: &AgeScoreTable) -> Result<(), IndicatorError> {
        age_score(self, table).map(|_| ())
    }
}

impl fmt::Display for Age {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Years(y) => write!(f, "{y}"),
            Self::Bracket(b) => f.write_str(b),
        }
    }
}

impl From<f64> for Age {
    fn from(v: f64) -> Self {
        Self::Years(v)
    }
}

impl From<&str> for Age {
    fn from(v: &str) -> Self {
        Self::Bracket(v.to_string())
    }
}

/// S1: the score of the bracket containing the age.
pub fn age_score(age: &Age, table: &AgeScoreTable) -> Result<f64, IndicatorError> {
    match age {
        Age::Years(y) => table.bracket_for(*y).map(|b| b.score),
        Age::Bracket(label) => table.bracket_by_label(label).map(|b| b.score),
    }
}

/// S2 for a single exam: `(100 / n) * N`.
pub fn infection_rate(infected: usize, tiles: usize) -> Result<f64, IndicatorError> {
    if tiles == 0 || infected > tiles {
        return Err(IndicatorError::BadCounts { infected, tiles });
    }
    // multiply first so that N == n gives exactly 100
    Ok(100.0 * infected as f64 / tiles as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Serious,
    Moderate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disease {
    pub name: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comorbidities {
    pub serious_count: usize,
    pub moderate_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diseases: Vec<Disease>,
}

impl Comorbidities {
    pub fn counts(serious: usize, moderate: usize) -> Self {
        Self {
            serious_count: serious,
            moderate_count: moderate,
            diseases: Vec::new(),
        }
    }

    pub fn from_list(diseases: Vec<Disease>) -> Self {
        let serious = diseases.iter().filter(|d| d.severity == Severity::Serious).count();
        Self {
            serious_count: serious,
            moderate_count: diseases.len() - serious,
            diseases,
        }
    }

    /// When a named list is present, the counts must match it.
    pub fn validate(&self) -> Result<(), IndicatorError> {
        if self.diseases.is_empty() {
            return Ok(());
        }
        let listed = Self::from_list(self.diseases.clone());
        if listed.serious_count != self.serious_count || listed.moderate_count != self.moderate_count {
            return Err(IndicatorError::BadComorbidities(format!(
                "counts ({}, {}) disagree with the named list ({}, {})",
                self.serious_count, self.moderate_count, listed.serious_count, listed.moderate_count
            )));
        }
        Ok(())
    }
}

/// S3: `serious * serious_penalty + moderate * moderate_penalty`.
pub fn comorbidity_score(c: &Comorbidities, serious_penalty: f64, moderate_penalty: f64) -> f64 {
    c.serious_count as f64 * serious_penalty + c.moderate_count as f64 * moderate_penalty
}

/// One chest X-ray read: N virus tiles out of n at day index `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamObservation {
    pub t: i64,
    pub infected: usize,
    pub tiles: usize,
}

impl ExamObservation {
    pub fn new(t: i64, infected: usize, tiles: usize) -> Result<Self, IndicatorError> {
        infection_rate(infected, tiles)?;
        Ok(Self { t, infected, tiles })
    }

    /// Infection rate f(t) in percent.
    pub fn rate(&self) -> f64 {
        100.0 * self.infected as f64 / self.tiles as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Single,
    Aggravation,
    Stability,
    Remission,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Aggravation => "aggravation",
            Self::Stability => "stability",
            Self::Remission => "remission",
        })
    }
}

/// Parameters of the two-exam rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    /// Stability band half-width, in percentage points.
    pub delta: f64,
    /// Remission gain as a percentage of f(t2), subtracted from S2.
    pub bonus_pct: f64,
    /// Aggravation penalty as a percentage of f(t2), added to S2.
    pub malus_pct: f64,
}

impl Default for TemporalParams {
    fn default() -> Self {
        Self {
            delta: 20.0,
            bonus_pct: 20.0,
            malus_pct: 20.0,
        }
    }
}

/// Chooses the kinetics branch for rates f1 -> f2.
pub fn classify_kinetics(f1: f64, f2: f64, delta: f64) -> Branch {
    if f2 > f1 + delta {
        Branch::Aggravation
    } else if (f2 - f1).abs() <= delta {
        Branch::Stability
    } else {
        Branch::Remission
    }
}

/// S2 from two exams: f(t2) plus malus on aggravation, f(t2) on stability,
/// f(t2) plus a (negative) bonus on remission.
pub fn temporal_infection_rate(
    first: &ExamObservation,
    second: &ExamObservation,
    params: &TemporalParams,
) -> Result<(f64, Branch), IndicatorError> {
    if first.t >= second.t {
        return Err(IndicatorError::NonChronological {
            first: first.t,
            second: second.t,
        });
    }
    if first.tiles != second.tiles {
        return Err(IndicatorError::GridMismatch {
            first: first.tiles,
            second: second.tiles,
        });
    }
    infection_rate(first.infected, first.tiles)?;
    infection_rate(second.infected, second.tiles)?;
    Ok(temporal_from_rates(first.rate(), second.rate(), params))
}

pub(crate) fn temporal_from_rates(f1: f64, f2: f64, params: &TemporalParams) -> (f64, Branch) {
    let branch = classify_kinetics(f1, f2, params.delta);
    let s2 = match branch {
        Branch::Aggravation => f2 + params.malus_pct * f2 / 100.0,
        Branch::Remission => f2 + (-params.bonus_pct * f2) / 100.0,
        _ => f2,
    };
    (s2, branch)
}

/// Presentation band for F. Bands never feed back into F.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Low,
    Moderate,
    High,
    Critical,
    /// F >= 1: no expected chance of recovery under the scoring system.
    Terminal,
}

impl Verdict {
    pub fn from_f(f: f64) -> Self {
        match f {
            f if f >= 1.0 => Self::Terminal,
            f if f >= 0.75 => Self::Critical,
            f if f >= 0.5 => Self::High,
            f if f >= 0.25 => Self::Moderate,
            _ => Self::Low,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Moderate => "moderate",
            Self::High => "high",
            Self::Critical => "critical",
            Self::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub threshold: f64,
    pub f: f64,
    pub branch: Branch,
    pub verdict: Verdict,
    pub disclaimer: String,
}

/// `F = (S1 + S2 + S3) / T`.
pub fn fatality_indicator(s1: f64, s2: f64, s3: f64, threshold: f64) -> Result<RiskAssessment, IndicatorError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(IndicatorError::BadThreshold(threshold));
    }
    if let Some(&bad) = [s1, s2, s3].iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(IndicatorError::NegativeScore(bad));
    }
    let f = (s1 + s2 + s3) / threshold;
    Ok(RiskAssessment {
        s1,
        s2,
        s3,
        threshold,
        f,
        branch: Branch::Single,
        verdict: Verdict::from_f(f),
        disclaimer: DISCLAIMER.to_string(),
    })
}

/// Where S2 comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InfectionSource {
    /// Virus tile count over grid size.
    #[default]
    TileCount,
    /// The classifier's whole-image Virus probability, times 100.
    ClassProbability,
}

/// Full scoring configuration. Missing fields in a config file take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub age_table: AgeScoreTable,
    pub serious_penalty: f64,
    pub moderate_penalty: f64,
    pub delta: f64,
    pub bonus_pct: f64,
    pub malus_pct: f64,
    pub threshold: f64,
    pub infection_source: InfectionSource,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            age_table: AgeScoreTable::default(),
            serious_penalty: 100.0,
            moderate_penalty: 10.0,
            delta: 20.0,
            bonus_pct: 20.0,
            malus_pct: 20.0,
            threshold: 200.0,
            infection_source: InfectionSource::TileCount,
        }
    }
}

impl ScoringConfig {
    pub fn temporal(&self) -> TemporalParams {
        TemporalParams {
            delta: self.delta,
            bonus_pct: self.bonus_pct,
            malus_pct: self.malus_pct,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndicatorError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| IndicatorError::Config(format!("{}: {e}", path.as_ref().display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| IndicatorError::Config(e.to_string()))?;
        if !cfg.threshold.is_finite() || cfg.threshold <= 0.0 {
            return Err(IndicatorError::BadThreshold(cfg.threshold));
        }
        Ok(cfg)
    }
}

/// Inputs for a complete assessment.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskInputs {
    pub age: Age,
    pub comorbidities: Comorbidities,
    /// Chronological exams; the last two drive temporal S2.
    pub exams: Vec<ExamObservation>,
}

/// Composes S1, S2 (single or temporal over the last two exams) and S3 into F.
pub fn assess(inputs: &RiskInputs, cfg: &ScoringConfig) -> Result<RiskAssessment, IndicatorError> {
    let s1 = age_score(&inputs.age, &cfg.age_table)?;
    inputs.comorbidities.validate()?;
    let s3 = comorbidity_score(&inputs.comorbidities, cfg.serious_penalty, cfg.moderate_penalty);
    let (s2, branch) = match inputs.exams.as_slice() {
        [] => (0.0, Branch::Single),
        [only] => (infection_rate(only.infected, only.tiles)?, Branch::Single),
        [.., prev, last] => temporal_infection_rate(prev, last, &cfg.temporal())?,
    };
    let mut out = fatality_indicator(s1, s2, s3, cfg.threshold)?;
    out.branch = branch;
    Ok(out)
}
