use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean: f64,
    /// `None` with a single estimate (n − 1 = 0).
    pub sd: Option<f64>,
    /// `None` when the true value is 0; read `absolute_bias` instead.
    pub relative_bias_pct: Option<f64>,
    pub absolute_bias: f64,
}

/// Mean, n−1 standard deviation, and bias of Monte Carlo estimates.
pub fn compute_metrics(estimates: &[f64], true_value: f64) -> Result<Metrics> {
    if estimates.is_empty() {
        return Err(Error::EmptyEstimates);
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.len() > 1).then(|| {
        let ss: f64 = estimates.iter().map(|e| (e - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    let absolute_bias = mean - true_value;
    Ok(Metrics {
        mean,
        sd,
        relative_bias_pct: (true_value != 0.0).then(|| 100.0 * absolute_bias / true_value),
        absolute_bias,
    })
}
