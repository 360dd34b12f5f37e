use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error metrics on the raw data scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the truth is constant and R² is undefined.
    pub r2: Option<f64>,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_sensor: Vec<SensorMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorMetrics {
    pub id: String,
    pub mae: f64,
    pub rmse: f64,
    pub n_points: usize,
}

/// MAE, RMSE and R² (about the truth mean).
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metrics", (pred.len(), 1), (truth.len(), 1)));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "metrics need at least 2 points, got {}",
            pred.len()
        )));
    }
    let n = pred.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(EvalReport {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - sq / ss_tot),
        n_points: pred.len(),
        per_sensor: Vec::new(),
    })
}
