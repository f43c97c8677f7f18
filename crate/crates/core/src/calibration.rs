//! Routing threshold: the dataset mean of predicted P(Hard).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::stable_mean;
use crate::par;
use crate::probe::{ProbeError, ProbeModel};
use crate::store::ActivationRecord;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot calibrate tau on an empty dataset")]
    Empty,
    #[error("record `{problem_id}`: {source}")]
    Probe {
        problem_id: String,
        #[source]
        source: ProbeError,
    },
    #[error("tau must lie strictly inside (0, 1), got {0}")]
    OutOfRange(f64),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("tau file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCalibration {
    pub tau: f64,
    pub dataset_name: String,
    pub n: usize,
}

impl TauCalibration {
    /// A user-supplied threshold for streaming use.
    pub fn fixed(tau: f64) -> Result<Self, CalibrationError> {
        check_tau(tau)?;
        Ok(Self {
            tau,
            dataset_name: "<override>".into(),
            n: 1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let t: TauCalibration = serde_json::from_slice(&std::fs::read(path)?)?;
        check_tau(t.tau)?;
        Ok(t)
    }
}

fn check_tau(tau: f64) -> Result<(), CalibrationError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(CalibrationError::OutOfRange(tau))
    }
}

/// Mean of probabilities, compensated so the result does not depend on order.
pub fn mean_probability(ps: &[f64]) -> Result<f64, CalibrationError> {
    let tau = stable_mean(ps).ok_or(CalibrationError::Empty)?;
    check_tau(tau)?;
    Ok(tau)
}

/// Predicted P(Hard) for every record, in input order.
pub fn predict_all(model: &ProbeModel, records: &[ActivationRecord]) -> Result<Vec<f64>, CalibrationError> {
    par::try_map(records, |r| {
        model.predict_p_hard(&r.activations).map_err(|source| CalibrationError::Probe {
            problem_id: r.problem_id.clone(),
            source,
        })
    })
}

/// `tau` = mean P(Hard) over every record of the evaluation set.
pub fn calibrate_tau(
    model: &ProbeModel,
    records: &[ActivationRecord],
    dataset_name: &str,
) -> Result<TauCalibration, CalibrationError> {
    if records.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let ps = predict_all(model, records)?;
    Ok(TauCalibration {
        tau: mean_probability(&ps)?,
        dataset_name: dataset_name.to_string(),
        n: records.len(),
    })
}
