//! From per-tile predictions to a contamination matrix and whole-image decisions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{argmax_with_priority, ClassLabel, ClassProbs};

/// Summed probabilities closer than this are treated as tied in majority voting.
pub const SUM_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregationError {
    #[error("expected {expected} tile predictions for a {rows}x{cols} grid, got {actual}")]
    LengthMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("no whole-image prediction and no contamination matrix supplied")]
    MissingInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub probs: ClassProbs,
    pub label: ClassLabel,
}

/// Grid of per-tile predictions over one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationMatrix {
    pub image_id: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells.
    pub cells: Vec<Cell>,
    /// Number of cells labeled Virus.
    #[serde(rename = "N")]
    pub virus_count: usize,
}

/// Wire form consumed by the service and dashboard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContaminationExport {
    pub image_id: String,
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<Vec<ClassLabel>>,
    #[serde(rename = "N")]
    pub virus_count: usize,
}

impl ContaminationMatrix {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[row * self.cols + col]
    }

    pub fn labels(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        self.cells.iter().map(|c| c.label)
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.labels().filter(|&l| l == label).count()
    }

    /// Infection rate `(100 / n) * N` for this grid.
    pub fn infection_rate(&self) -> f64 {
        100.0 * self.virus_count as f64 / self.len() as f64
    }

    pub fn export(&self) -> ContaminationExport {
        ContaminationExport {
            image_id: self.image_id.clone(),
            rows: self.rows,
            cols: self.cols,
            labels: self
                .cells
                .chunks(self.cols)
                .map(|row| row.iter().map(|c| c.label).collect())
                .collect(),
            virus_count: self.virus_count,
        }
    }
}

pub fn build_contamination_matrix(
    tile_probs: &[ClassProbs],
    rows: usize,
    cols: usize,
    image_id: impl Into<String>,
) -> Result<ContaminationMatrix, AggregationError> {
    if rows == 0 || cols == 0 || tile_probs.len() != rows * cols {
        return Err(AggregationError::LengthMismatch {
            rows,
            cols,
            expected: rows * cols,
            actual: tile_probs.len(),
        });
    }
    let cells: Vec<Cell> = tile_probs
        .iter()
        .map(|&probs| Cell {
            probs,
            label: probs.argmax(),
        })
        .collect();
    let virus_count = cells.iter().filter(|c| c.label == ClassLabel::Virus).count();
    Ok(ContaminationMatrix {
        image_id: image_id.into(),
        rows,
        cols,
        cells,
        virus_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MajorityVote,
    Default,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MajorityVote => "majority voting",
            Self::Default => "by default",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDecision {
    pub image_id: String,
    pub label: ClassLabel,
    pub strategy: Strategy,
    pub pneumonia: bool,
}

impl ImageDecision {
    pub fn new(image_id: impl Into<String>, label: ClassLabel, strategy: Strategy) -> Self {
        Self {
            image_id: image_id.into(),
            label,
            strategy,
            pneumonia: label.is_pneumonia(),
        }
    }
}

/// Plurality of cell labels.
///
/// Count ties go to the tied class with the larger probability mass summed
/// over all cells, then to Virus > Bacteria > Normal.
pub fn majority_vote(cm: &ContaminationMatrix) -> ImageDecision {
    let mut counts = [0usize; 3];
    let mut mass = [0.0f64; 3];
    for cell in &cm.cells {
        counts[cell.label.index()] += 1;
        for (m, p) in mass.iter_mut().zip(cell.probs.as_array()) {
            *m += p;
        }
    }
    let mut best = ClassLabel::PRIORITY[0];
    for &label in &ClassLabel::PRIORITY[1..] {
        let (c, b) = (counts[label.index()], counts[best.index()]);
        if c > b || (c == b && mass[label.index()] > mass[best.index()] + SUM_TIE_EPSILON) {
            best = label;
        }
    }
    ImageDecision::new(cm.image_id.clone(), best, Strategy::MajorityVote)
}

/// Single whole-image decision: the argmax of the whole-image prediction
/// when present, otherwise of the mean cell distribution.
pub fn default_decision(
    whole: Option<&ClassProbs>,
    cm: Option<&ContaminationMatrix>,
) -> Result<ImageDecision, AggregationError> {
    let (id, probs) = match (whole, cm) {
        (Some(p), cm) => (cm.map(|c| c.image_id.clone()).unwrap_or_default(), *p),
        (None, Some(cm)) if !cm.is_empty() => (
            cm.image_id.clone(),
            ClassProbs::mean(cm.cells.iter().map(|c| &c.probs)).expect("non-empty"),
        ),
        _ => return Err(AggregationError::MissingInput),
    };
    Ok(ImageDecision::new(
        id,
        argmax_with_priority(&probs.as_array()),
        Strategy::Default,
    ))
}

/// Advisory screening flag: a Virus decision during an epidemic.
pub fn presume_covid(decision: &ImageDecision, epidemic_context: bool) -> bool {
    epidemic_context && decision.label == ClassLabel::Virus
}
