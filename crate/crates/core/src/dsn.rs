//! Difficulty-sensitive neuron (DSN) selection.
//!
//! For a threshold `θ` the gap of neuron `n` is the mean activation of the
//! low-difficulty group minus the mean of the high-difficulty group. Two
//! gaps are computed per neuron, one at `theta_easy` (`d ≤ θ` vs `d > θ`)
//! and one at `theta_hard` (`d < θ` vs `d ≥ θ`, so that `θ = 5` still has
//! a non-empty high group). The selected set is the union of the neurons
//! passing either test.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::CompensatedSum;
use crate::par;
use crate::store::ActivationRecord;

#[derive(Debug, Error)]
pub enum DsnError {
    #[error("no labeled record falls in group `{group}`")]
    EmptyGroup { group: String },
    #[error("record `{0}` has no difficulty label")]
    Unlabeled(String),
    #[error("invalid gap config: {0}")]
    Config(String),
    #[error("no neuron passed the selection rule; the probe would have zero features")]
    EmptySelection,
    #[error("neuron index {index} out of range for {neuron_count} neurons")]
    NeuronOutOfRange { index: usize, neuron_count: usize },
    #[error("inconsistent activation lengths in input records")]
    Ragged,
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("DSN file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// `gap > margin` for both sets.
    #[default]
    Sign,
    /// `|gap| > margin` for both sets.
    Abs,
    /// The `top_k` largest `|gap|` per set; margin is ignored.
    TopK,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sign" => Ok(SelectionMode::Sign),
            "abs" => Ok(SelectionMode::Abs),
            "top_k" | "top-k" | "topk" => Ok(SelectionMode::TopK),
            other => Err(format!("unknown selection mode `{other}` (expected sign|abs|top_k)")),
        }
    }
}

/// Where the two comparison groups split around a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// low: `d ≤ θ`, high: `d > θ`.
    LeGt,
    /// low: `d < θ`, high: `d ≥ θ`.
    LtGe,
}

impl Boundary {
    fn is_low(self, d: u8, theta: u8) -> bool {
        match self {
            Boundary::LeGt => d <= theta,
            Boundary::LtGe => d < theta,
        }
    }

    fn describe(self, theta: u8, low: bool) -> String {
        match (self, low) {
            (Boundary::LeGt, true) => format!("d <= {theta}"),
            (Boundary::LeGt, false) => format!("d > {theta}"),
            (Boundary::LtGe, true) => format!("d < {theta}"),
            (Boundary::LtGe, false) => format!("d >= {theta}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub theta_easy: u8,
    pub theta_hard: u8,
    pub margin: f64,
    pub selection_mode: SelectionMode,
    pub top_k: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            theta_easy: 1,
            theta_hard: 5,
            margin: 0.0,
            selection_mode: SelectionMode::Sign,
            top_k: 32,
        }
    }
}

impl GapConfig {
    pub fn validate(&self) -> Result<(), DsnError> {
        if !(1 <= self.theta_easy && self.theta_easy < self.theta_hard && self.theta_hard <= 5) {
            return Err(DsnError::Config(format!(
                "need 1 <= theta_easy < theta_hard <= 5, got ({}, {})",
                self.theta_easy, self.theta_hard
            )));
        }
        if self.margin.is_nan() || self.margin < 0.0 {
            return Err(DsnError::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if self.selection_mode == SelectionMode::TopK && self.top_k == 0 {
            return Err(DsnError::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}

/// Selected neurons plus the full per-neuron gap diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsnSelection {
    pub config: GapConfig,
    pub neuron_count: usize,
    pub easy_set: Vec<usize>,
    pub hard_set: Vec<usize>,
    pub union_set: Vec<usize>,
    pub gaps_easy: Vec<f64>,
    pub gaps_hard: Vec<f64>,
}

impl DsnSelection {
    /// A selection over explicit indices, with no gap diagnostics.
    pub fn from_indices(neuron_count: usize, indices: &[usize]) -> Result<Self, DsnError> {
        let mut union_set = indices.to_vec();
        union_set.sort_unstable();
        union_set.dedup();
        if let Some(&index) = union_set.iter().find(|&&i| i >= neuron_count) {
            return Err(DsnError::NeuronOutOfRange { index, neuron_count });
        }
        if union_set.is_empty() {
            return Err(DsnError::EmptySelection);
        }
        Ok(Self {
            config: GapConfig::default(),
            neuron_count,
            easy_set: union_set.clone(),
            hard_set: Vec::new(),
            union_set,
            gaps_easy: Vec::new(),
            gaps_hard: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.union_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.union_set.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<(), DsnError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DsnError> {
        let sel: DsnSelection = serde_json::from_slice(&std::fs::read(path)?)?;
        if sel.union_set != union_of(&sel.easy_set, &sel.hard_set) {
            return Err(DsnError::Config("union_set is not easy_set ∪ hard_set".into()));
        }
        if let Some(&index) = sel.union_set.iter().find(|&&i| i >= sel.neuron_count) {
            return Err(DsnError::NeuronOutOfRange {
                index,
                neuron_count: sel.neuron_count,
            });
        }
        Ok(sel)
    }
}

impl fmt::Display for DsnSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} of {} neurons selected (easy {}, hard {})",
            self.union_set.len(),
            self.neuron_count,
            self.easy_set.len(),
            self.hard_set.len()
        )
    }
}

fn labels(records: &[ActivationRecord]) -> Result<Vec<u8>, DsnError> {
    records
        .iter()
        .map(|r| r.difficulty.ok_or_else(|| DsnError::Unlabeled(r.problem_id.clone())))
        .collect()
}

fn neuron_count(records: &[ActivationRecord]) -> Result<usize, DsnError> {
    let n = records.first().map(|r| r.activations.len()).unwrap_or(0);
    if records.iter().any(|r| r.activations.len() != n) {
        return Err(DsnError::Ragged);
    }
    Ok(n)
}

/// Per-neuron mean activation over the records whose difficulty satisfies `predicate`.
///
/// `group` names the predicate in the empty-group error.
pub fn group_mean_activation(
    records: &[ActivationRecord],
    predicate: impl Fn(u8) -> bool,
    group: &str,
) -> Result<Vec<f64>, DsnError> {
    let diffs = labels(records)?;
    let members: Vec<&ActivationRecord> = records
        .iter()
        .zip(&diffs)
        .filter(|(_, &d)| predicate(d))
        .map(|(r, _)| r)
        .collect();
    if members.is_empty() {
        return Err(DsnError::EmptyGroup { group: group.to_string() });
    }
    let n = neuron_count(records)?;
    let count = members.len() as f64;
    Ok(par::map_range(n, |j| {
        members
            .iter()
            .map(|r| r.activations[j] as f64)
            .collect::<CompensatedSum>()
            .total()
            / count
    }))
}

/// Low-group mean minus high-group mean for every neuron at one threshold.
pub fn gap_vector(records: &[ActivationRecord], theta: u8, boundary: Boundary) -> Result<Vec<f64>, DsnError> {
    let low = group_mean_activation(records, |d| boundary.is_low(d, theta), &boundary.describe(theta, true))?;
    let high = group_mean_activation(records, |d| !boundary.is_low(d, theta), &boundary.describe(theta, false))?;
    Ok(low.iter().zip(&high).map(|(l, h)| l - h).collect())
}

/// Gap of a single neuron.
pub fn gap(records: &[ActivationRecord], neuron: usize, theta: u8, boundary: Boundary) -> Result<f64, DsnError> {
    let neuron_count = neuron_count(records)?;
    if neuron >= neuron_count {
        return Err(DsnError::NeuronOutOfRange { index: neuron, neuron_count });
    }
    let diffs = labels(records)?;
    let mut low = (CompensatedSum::new(), 0usize);
    let mut high = (CompensatedSum::new(), 0usize);
    for (r, &d) in records.iter().zip(&diffs) {
        let g = if boundary.is_low(d, theta) { &mut low } else { &mut high };
        g.0.add(r.activations[neuron] as f64);
        g.1 += 1;
    }
    for (g, is_low) in [(&low, true), (&high, false)] {
        if g.1 == 0 {
            return Err(DsnError::EmptyGroup {
                group: boundary.describe(theta, is_low),
            });
        }
    }
    Ok(low.0.total() / low.1 as f64 - high.0.total() / high.1 as f64)
}

fn union_of(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

fn select(gaps: &[f64], config: &GapConfig) -> Vec<usize> {
    match config.selection_mode {
        SelectionMode::Sign => (0..gaps.len()).filter(|&n| gaps[n] > config.margin).collect(),
        SelectionMode::Abs => (0..gaps.len()).filter(|&n| gaps[n].abs() > config.margin).collect(),
        SelectionMode::TopK => {
            let mut order: Vec<usize> = (0..gaps.len()).collect();
            // Stable sort keeps lower indices first among equal magnitudes.
            order.sort_by(|&a, &b| gaps[b].abs().total_cmp(&gaps[a].abs()));
            order.truncate(config.top_k);
            order.sort_unstable();
            order
        }
    }
}

/// Computes both gap vectors and selects the DSN set.
pub fn identify_dsn(records: &[ActivationRecord], config: &GapConfig) -> Result<DsnSelection, DsnError> {
    config.validate()?;
    let neuron_count = neuron_count(records)?;
    let gaps_easy = gap_vector(records, config.theta_easy, Boundary::LeGt)?;
    let gaps_hard = gap_vector(records, config.theta_hard, Boundary::LtGe)?;
    let easy_set = select(&gaps_easy, config);
    let hard_set = select(&gaps_hard, config);
    let union_set = union_of(&easy_set, &hard_set);
    if union_set.is_empty() {
        return Err(DsnError::EmptySelection);
    }
    Ok(DsnSelection {
        config: *config,
        neuron_count,
        easy_set,
        hard_set,
        union_set,
        gaps_easy,
        gaps_hard,
    })
}
