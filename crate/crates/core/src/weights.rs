//! Treatment-model fits and the balancing weights derived from them.
//!
//! Binary treatments get `|a - p̂|`; continuous treatments get inverse
//! Gaussian-density weights `1 / φ(a; μ̂, σ̂)` with `σ̂` the residual sd of the
//! treatment fit. Pooled variants fit the treatment model on pool sums.

use crate::data::{Dataset, Term};
use crate::error::{Error, Result};
use crate::glm::{self, LogisticFit, Matrix, WlsFit};
use crate::pooling::PooledDataset;
use serde::{Deserialize, Serialize};

/// Residual sd below which density weights are undefined.
pub const MIN_TREATMENT_SD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

impl TreatmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TreatmentKind::Binary => "binary",
            TreatmentKind::Continuous => "continuous",
        }
    }
}

fn default_true() -> bool {
    true
}

/// Treatment (propensity) model: which basis terms enter, whether it has an
/// intercept, and whether it is fit on pooled sums.
///
/// An empty basis with an intercept is the deliberately misspecified
/// constant-propensity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentModelSpec {
    pub kind: TreatmentKind,
    #[serde(default)]
    pub covariate_basis: Vec<Term>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub pooled: bool,
}

impl TreatmentModelSpec {
    pub fn new(kind: TreatmentKind, covariate_basis: Vec<Term>) -> Self {
        Self {
            kind,
            covariate_basis,
            intercept: true,
            pooled: false,
        }
    }

    pub fn intercept_only(kind: TreatmentKind) -> Self {
        Self::new(kind, Vec::new())
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    pub fn pooled(mut self) -> Self {
        self.pooled = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.covariate_basis.iter().find(|t| !seen.insert(*t)) {
            return Err(Error::config(
                "treatment.covariate_basis",
                format!("duplicate term `{dup}`"),
            ));
        }
        if !self.intercept && self.covariate_basis.is_empty() {
            return Err(Error::config(
                "treatment",
                "model has neither an intercept nor basis terms",
            ));
        }
        Ok(())
    }

    fn design_from_columns(&self, n: usize, columns: Vec<Vec<f64>>) -> Result<Matrix> {
        let p = columns.len() + usize::from(self.intercept);
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            if self.intercept {
                data.push(1.0);
            }
            data.extend(columns.iter().map(|c| c[i]));
        }
        Matrix::new(n, p, data)
    }

    /// Individual-level treatment design.
    pub fn design(&self, data: &Dataset) -> Result<Matrix> {
        self.validate()?;
        let cols = self
            .covariate_basis
            .iter()
            .map(|t| data.eval_term(t))
            .collect::<Result<Vec<_>>>()?;
        self.design_from_columns(data.len(), cols)
    }

    /// Pool-level treatment design on summed basis terms.
    pub fn pooled_design(&self, pooled: &PooledDataset) -> Result<Matrix> {
        self.validate()?;
        let cols = self
            .covariate_basis
            .iter()
            .map(|t| pooled.sums_of(t))
            .collect::<Result<Vec<_>>>()?;
        self.design_from_columns(pooled.len(), cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    AbsResidualBinary,
    IpwContinuous,
    AbsResidualPooledBinomial,
    IpwPooledGaussian,
    /// Weights provided by the caller rather than estimated here.
    Supplied,
}

impl WeightScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightScheme::AbsResidualBinary => "abs_residual_binary",
            WeightScheme::IpwContinuous => "ipw_continuous",
            WeightScheme::AbsResidualPooledBinomial => "abs_residual_pooled_binomial",
            WeightScheme::IpwPooledGaussian => "ipw_pooled_gaussian",
            WeightScheme::Supplied => "supplied",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            WeightScheme::AbsResidualBinary,
            WeightScheme::IpwContinuous,
            WeightScheme::AbsResidualPooledBinomial,
            WeightScheme::IpwPooledGaussian,
            WeightScheme::Supplied,
        ]
        .into_iter()
        .find(|w| w.as_str() == s)
    }

    pub fn individual(kind: TreatmentKind) -> Self {
        match kind {
            TreatmentKind::Binary => WeightScheme::AbsResidualBinary,
            TreatmentKind::Continuous => WeightScheme::IpwContinuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub scheme: WeightScheme,
    pub max_weight: f64,
    /// A cap was requested and truncated at least one weight.
    pub capped: bool,
}

impl WeightVector {
    fn build(values: Vec<f64>, scheme: WeightScheme, cap: Option<f64>) -> Result<Self> {
        let mut capped = false;
        let values: Vec<f64> = match cap {
            Some(c) => values
                .into_iter()
                .map(|w| {
                    if w > c {
                        capped = true;
                        c
                    } else {
                        w
                    }
                })
                .collect(),
            None => values,
        };
        if let Some(i) = values.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::NonFinite(format!("weight {i} ({})", values[i])));
        }
        let max_weight = values.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            values,
            scheme,
            max_weight,
            capped,
        })
    }

    /// Caller-provided weights, e.g. from a globally fit treatment model.
    pub fn supplied(values: Vec<f64>) -> Result<Self> {
        Self::build(values, WeightScheme::Supplied, None)
    }

    pub fn unit(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            scheme: WeightScheme::Supplied,
            max_weight: 1.0,
            capped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> WeightSummary {
        let n = self.values.len();
        let sum: f64 = self.values.iter().sum();
        WeightSummary {
            n,
            min: self.values.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.max_weight,
            mean: if n > 0 { sum / n as f64 } else { 0.0 },
            sum,
            capped: self.capped,
            scheme: self.scheme,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sum: f64,
    pub capped: bool,
    pub scheme: WeightScheme,
}

/// `1 / φ(a; μ, σ)`.
pub fn inverse_normal_density(a: f64, mean: f64, sd: f64) -> f64 {
    let z = (a - mean) / sd;
    sd * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * z * z).exp()
}

fn check_kind(spec: &TreatmentModelSpec, kind: TreatmentKind, pooled: bool) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::config(
            "treatment.kind",
            format!("expected {}, got {}", kind.as_str(), spec.kind.as_str()),
        ));
    }
    if spec.pooled != pooled {
        return Err(Error::config(
            "treatment.pooled",
            format!("expected pooled = {pooled}"),
        ));
    }
    Ok(())
}

fn gaussian_ipw(
    treatment: &[f64],
    fit: &WlsFit,
    scheme: WeightScheme,
    cap: Option<f64>,
) -> Result<WeightVector> {
    let sigma = fit.residual_sd;
    if sigma.is_nan() || sigma < MIN_TREATMENT_SD {
        return Err(Error::DegenerateTreatment { sigma });
    }
    let values = treatment
        .iter()
        .zip(&fit.fitted)
        .map(|(&a, &mu)| inverse_normal_density(a, mu, sigma))
        .collect();
    WeightVector::build(values, scheme, cap)
}

/// `|a − p̂|` from a logistic treatment model.
pub fn binary_weights(
    data: &Dataset,
    spec: &TreatmentModelSpec,
) -> Result<(WeightVector, LogisticFit)> {
    check_kind(spec, TreatmentKind::Binary, false)?;
    let design = spec.design(data)?;
    let a = data.treatment();
    let fit = glm::fit_logistic(&design, &a)?;
    let values = a
        .iter()
        .zip(&fit.fitted_probabilities)
        .map(|(a, p)| (a - p).abs())
        .collect();
    Ok((
        WeightVector::build(values, WeightScheme::AbsResidualBinary, None)?,
        fit,
    ))
}

/// Inverse Gaussian-density weights from a linear treatment model.
pub fn continuous_ipw_weights(
    data: &Dataset,
    spec: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<(WeightVector, WlsFit)> {
    check_kind(spec, TreatmentKind::Continuous, false)?;
    let design = spec.design(data)?;
    let a = data.treatment();
    let fit = glm::fit_linear_gaussian(&design, &a)?;
    let w = gaussian_ipw(&a, &fit, WeightScheme::IpwContinuous, cap)?;
    Ok((w, fit))
}

/// `|a_pool − g·p̂|` from a binomial model with trials = pool size.
pub fn pooled_binary_weights(
    pooled: &PooledDataset,
    spec: &TreatmentModelSpec,
) -> Result<(WeightVector, LogisticFit)> {
    check_kind(spec, TreatmentKind::Binary, true)?;
    let design = spec.pooled_design(pooled)?;
    let successes: Vec<f64> = pooled.rows.iter().map(|r| r.a_pool).collect();
    let trials: Vec<f64> = pooled.rows.iter().map(|r| r.pool_size as f64).collect();
    let fit = glm::fit_binomial(&design, &successes, &trials)?;
    let values = successes
        .iter()
        .zip(&trials)
        .zip(&fit.fitted_probabilities)
        .map(|((s, g), p)| (s - g * p).abs())
        .collect();
    Ok((
        WeightVector::build(values, WeightScheme::AbsResidualPooledBinomial, None)?,
        fit,
    ))
}

/// Inverse Gaussian-density weights from a linear model of `a_pool`.
pub fn pooled_continuous_ipw_weights(
    pooled: &PooledDataset,
    spec: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<(WeightVector, WlsFit)> {
    check_kind(spec, TreatmentKind::Continuous, true)?;
    let design = spec.pooled_design(pooled)?;
    let a: Vec<f64> = pooled.rows.iter().map(|r| r.a_pool).collect();
    let fit = glm::fit_linear_gaussian(&design, &a)?;
    let w = gaussian_ipw(&a, &fit, WeightScheme::IpwPooledGaussian, cap)?;
    Ok((w, fit))
}

/// Dispatches on kind for individual-level data.
pub fn estimate_weights(
    data: &Dataset,
    spec: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<WeightVector> {
    match spec.kind {
        TreatmentKind::Binary => binary_weights(data, spec).map(|(w, _)| w),
        TreatmentKind::Continuous => continuous_ipw_weights(data, spec, cap).map(|(w, _)| w),
    }
}

/// Dispatches on kind for pooled data.
pub fn estimate_pooled_weights(
    pooled: &PooledDataset,
    spec: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<WeightVector> {
    match spec.kind {
        TreatmentKind::Binary => pooled_binary_weights(pooled, spec).map(|(w, _)| w),
        TreatmentKind::Continuous => {
            pooled_continuous_ipw_weights(pooled, spec, cap).map(|(w, _)| w)
        }
    }
}
