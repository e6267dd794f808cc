use super::rng::{stream_rng, Stream};
use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const SYNTHETIC_DEFAULT: &str = include_str!("../../configs/application_synthetic.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub law: CovariateLaw,
}

/// `intercept + Σ coefficient·covariate`; absent covariates contribute 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearPredictor {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

impl LinearPredictor {
    fn resolve(&self, names: &[String], field: &str) -> Result<Vec<f64>> {
        if let Some(k) = self.coefficients.keys().find(|k| !names.contains(k)) {
            return Err(Error::config(field, format!("unknown covariate `{k}`")));
        }
        Ok(names
            .iter()
            .map(|n| self.coefficients.get(n).copied().unwrap_or(0.0))
            .collect())
    }
}

/// `γ = a(ψ₀₁ + ψ₁₁ᵀx) + a²(ψ₀₂ + ψ₁₂ᵀx)` with coefficients keyed by covariate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadraticBlipSpec {
    pub psi01: f64,
    #[serde(default)]
    pub psi11: BTreeMap<String, f64>,
    pub psi02: f64,
    #[serde(default)]
    pub psi12: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationConfig {
    #[serde(default)]
    pub label: String,
    pub site_sizes: Vec<usize>,
    #[serde(default, rename = "covariate")]
    pub covariates: Vec<CovariateSpec>,
    pub treatment: Option<LinearPredictor>,
    pub treatment_sd: Option<f64>,
    pub outcome: Option<LinearPredictor>,
    #[serde(default = "one")]
    pub outcome_sd: f64,
    pub blip: Option<QuadraticBlipSpec>,
}

fn one() -> f64 {
    1.0
}

impl ApplicationConfig {
    /// Shipped demonstration parameters; invented, not fitted to real data.
    pub fn synthetic_default() -> Self {
        Self::from_toml(SYNTHETIC_DEFAULT).expect("built-in application config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("application config", e.to_string()))
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }
}

fn missing(what: &str) -> Error {
    Error::ConfigMissing(format!("application config needs `{what}`"))
}

fn dot(c: &[f64], x: &[f64]) -> f64 {
    c.iter().zip(x).map(|(c, x)| c * x).sum()
}

/// Multi-site dataset with Gaussian dose and outcome, quadratic blip.
///
/// Per subject: covariates from their laws, `a ~ N(α₀ + αᵀx, treatment_sd)`,
/// `y ~ N(β₀ + βᵀx + γ(x, a), outcome_sd)`. Sites are labelled `1..=K`.
pub fn generate_application_style(
    config: Option<&ApplicationConfig>,
    seed: u64,
    replicate: u64,
) -> Result<Dataset> {
    let config = config.ok_or_else(|| missing("a configuration file"))?;
    if config.site_sizes.is_empty() || config.site_sizes.contains(&0) {
        return Err(Error::config(
            "site_sizes",
            "need at least one non-empty site",
        ));
    }
    if config.covariates.is_empty() {
        return Err(missing("covariate"));
    }
    let treatment = config
        .treatment
        .as_ref()
        .ok_or_else(|| missing("treatment"))?;
    let treatment_sd = config.treatment_sd.ok_or_else(|| missing("treatment_sd"))?;
    let outcome = config.outcome.as_ref().ok_or_else(|| missing("outcome"))?;
    let blip = config.blip.as_ref().ok_or_else(|| missing("blip"))?;
    let names = config.covariate_names();
    let alpha = treatment.resolve(&names, "treatment.coefficients")?;
    let beta = outcome.resolve(&names, "outcome.coefficients")?;
    let lin = |m: &BTreeMap<String, f64>, f: &str| {
        LinearPredictor {
            intercept: 0.0,
            coefficients: m.clone(),
        }
        .resolve(&names, f)
    };
    let psi11 = lin(&blip.psi11, "blip.psi11")?;
    let psi12 = lin(&blip.psi12, "blip.psi12")?;
    let dose_noise =
        Normal::new(0.0, treatment_sd).map_err(|e| Error::config("treatment_sd", e.to_string()))?;
    let outcome_noise = Normal::new(0.0, config.outcome_sd)
        .map_err(|e| Error::config("outcome_sd", e.to_string()))?;

    let mut records = Vec::with_capacity(config.site_sizes.iter().sum());
    for (k, &n) in config.site_sizes.iter().enumerate() {
        let site = (k + 1).to_string();
        let key = (k + 1) as u64;
        let mut crng = stream_rng(seed, replicate, key, Stream::Covariates);
        let mut trng = stream_rng(seed, replicate, key, Stream::Treatment);
        let mut orng = stream_rng(seed, replicate, key, Stream::Outcome);
        let mut columns = Vec::with_capacity(names.len());
        for c in &config.covariates {
            let col: Vec<f64> = match c.law {
                CovariateLaw::Normal { mean, sd } => Normal::new(mean, sd)
                    .map_err(|e| Error::config(c.name.as_str(), e.to_string()))?
                    .sample_iter(&mut crng)
                    .take(n)
                    .collect(),
                CovariateLaw::Bernoulli { p } => Bernoulli::new(p)
                    .map_err(|e| Error::config(c.name.as_str(), e.to_string()))?
                    .sample_iter(&mut crng)
                    .take(n)
                    .map(|b| if b { 1.0 } else { 0.0 })
                    .collect(),
            };
            columns.push(col);
        }
        for i in 0..n {
            let x: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            let a = treatment.intercept + dot(&alpha, &x) + dose_noise.sample(&mut trng);
            let gamma = a * (blip.psi01 + dot(&psi11, &x)) + a * a * (blip.psi02 + dot(&psi12, &x));
            let y = outcome.intercept + dot(&beta, &x) + gamma + outcome_noise.sample(&mut orng);
            records.push(SubjectRecord {
                site: site.clone(),
                covariates: x,
                treatment: a,
                outcome: y,
            });
        }
    }
    Dataset::new(names, records)
}
