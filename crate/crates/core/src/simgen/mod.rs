//! Seeded data-generating mechanisms for the simulation scenarios and an
//! application-style synthetic generator.
//!
//! Every random draw comes from a stream keyed by
//! `(base_seed, replicate, centre, stream)`, so a replicate is reproducible
//! on its own and independent of how many others run alongside it.

mod application;
mod rng;

pub use application::{
    generate_application_style, ApplicationConfig, CovariateLaw, CovariateSpec, LinearPredictor,
    QuadraticBlipSpec,
};
pub use rng::{derived_seed, stream_rng, Stream};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::glm::expit;
use crate::weights::TreatmentKind;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

const SCENARIOS_TOML: &str = include_str!("../../configs/scenarios.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    Identical,
    Different,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfoundingLevel {
    VeryLow,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl ConfoundingLevel {
    pub const ALL: [ConfoundingLevel; 5] = [
        ConfoundingLevel::VeryLow,
        ConfoundingLevel::Low,
        ConfoundingLevel::Moderate,
        ConfoundingLevel::High,
        ConfoundingLevel::VeryHigh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfoundingLevel::VeryLow => "very_low",
            ConfoundingLevel::Low => "low",
            ConfoundingLevel::Moderate => "moderate",
            ConfoundingLevel::High => "high",
            ConfoundingLevel::VeryHigh => "very_high",
        }
    }

    /// ρ in `p(x) = 1 / (1 + ρ·e^{−(x−10)})`.
    pub fn rho(self) -> f64 {
        match self {
            ConfoundingLevel::VeryLow => 15.0,
            ConfoundingLevel::Low => 8.0,
            ConfoundingLevel::Moderate => 5.0,
            ConfoundingLevel::High => 2.0,
            ConfoundingLevel::VeryHigh => 1.0,
        }
    }

    /// SD of `A ~ N(X, SD_A)`.
    pub fn sd_a(self) -> f64 {
        match self {
            ConfoundingLevel::VeryLow => 12.0,
            ConfoundingLevel::Low => 4.0,
            ConfoundingLevel::Moderate => 1.9,
            ConfoundingLevel::High => 1.2,
            ConfoundingLevel::VeryHigh => 0.5,
        }
    }

    /// Target range of the treated fraction (binary treatment).
    pub fn treated_fraction_bracket(self) -> (f64, f64) {
        match self {
            ConfoundingLevel::VeryLow => (0.05, 0.20),
            ConfoundingLevel::Low => (0.10, 0.25),
            ConfoundingLevel::Moderate => (0.15, 0.30),
            ConfoundingLevel::High => (0.25, 0.40),
            ConfoundingLevel::VeryHigh => (0.35, 0.50),
        }
    }

    /// Target range of corr(A, X) (continuous treatment).
    pub fn correlation_bracket(self) -> (f64, f64) {
        match self {
            ConfoundingLevel::VeryLow => (0.0, 0.1),
            ConfoundingLevel::Low => (0.2, 0.3),
            ConfoundingLevel::Moderate => (0.4, 0.5),
            ConfoundingLevel::High => (0.6, 0.7),
            ConfoundingLevel::VeryHigh => (0.8, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateDistribution {
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// Log-scale mean and SD.
    LogNormal {
        meanlog: f64,
        sdlog: f64,
    },
}

impl CovariateDistribution {
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let bad =
            |e: &dyn std::fmt::Display| Error::config("covariate distribution", e.to_string());
        Ok(match *self {
            CovariateDistribution::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| bad(&e))?;
                d.sample_iter(rng).take(n).collect()
            }
            CovariateDistribution::Uniform { low, high } => {
                let d = Uniform::new_inclusive(low, high).map_err(|e| bad(&e))?;
                d.sample_iter(rng).take(n).collect()
            }
            CovariateDistribution::LogNormal { meanlog, sdlog } => {
                let d = LogNormal::new(meanlog, sdlog).map_err(|e| bad(&e))?;
                d.sample_iter(rng).take(n).collect()
            }
        })
    }
}

/// Centre 1 → N(10,1), centre 2 → U[6,14], centre 3 → LN(0.7, 0.5).
pub fn default_centre_distributions() -> Vec<CovariateDistribution> {
    vec![
        CovariateDistribution::Normal {
            mean: 10.0,
            sd: 1.0,
        },
        CovariateDistribution::Uniform {
            low: 6.0,
            high: 14.0,
        },
        CovariateDistribution::LogNormal {
            meanlog: 0.7,
            sdlog: 0.5,
        },
    ]
}

fn default_n_total() -> usize {
    60_000
}
fn default_n_centres() -> usize {
    3
}
fn default_true_psi() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_base_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub covariate_mode: CovariateMode,
    pub treatment_kind: TreatmentKind,
    pub confounding_level: ConfoundingLevel,
    pub pool_size_g: usize,
    #[serde(default = "default_n_total")]
    pub n_total: usize,
    #[serde(default = "default_n_centres")]
    pub n_centres: usize,
    #[serde(default = "default_true_psi")]
    pub true_psi: [f64; 2],
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    /// Per-centre covariate laws in `different` mode; defaults to
    /// [`default_centre_distributions`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre_distributions: Option<Vec<CovariateDistribution>>,
    /// Relative centre sizes; equal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre_fractions: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct ScenarioFile {
    scenario: Vec<ScenarioConfig>,
}

impl ScenarioConfig {
    /// All built-in scenarios, in file order.
    pub fn builtin() -> Vec<ScenarioConfig> {
        toml::from_str::<ScenarioFile>(SCENARIOS_TOML)
            .expect("built-in scenario file parses")
            .scenario
    }

    pub fn by_id(id: &str) -> Result<ScenarioConfig> {
        Self::builtin()
            .into_iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::config("scenario", format!("unknown scenario `{id}`")))
    }

    pub fn from_toml(text: &str) -> Result<Vec<ScenarioConfig>> {
        let f: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::config("scenario file", e.to_string()))?;
        Ok(f.scenario)
    }

    pub fn with_n(mut self, n_total: usize) -> Self {
        self.n_total = n_total;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_centres == 0 || self.n_total < self.n_centres {
            return Err(Error::config(
                "n_total",
                format!("{} subjects over {} centres", self.n_total, self.n_centres),
            ));
        }
        if let Some(f) = &self.centre_fractions {
            if f.len() != self.n_centres || f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::config(
                    "centre_fractions",
                    "need one positive fraction per centre",
                ));
            }
        }
        if self.covariate_mode == CovariateMode::Different
            && self.centre_laws().len() < self.n_centres
        {
            return Err(Error::config(
                "centre_distributions",
                "need one distribution per centre",
            ));
        }
        Ok(())
    }

    fn centre_laws(&self) -> Vec<CovariateDistribution> {
        self.centre_distributions
            .clone()
            .unwrap_or_else(default_centre_distributions)
    }

    /// Centre sizes summing to `n_total`; remainders go to the first centres.
    pub fn centre_sizes(&self) -> Vec<usize> {
        let k = self.n_centres;
        match &self.centre_fractions {
            None => (0..k)
                .map(|c| self.n_total / k + usize::from(c < self.n_total % k))
                .collect(),
            Some(f) => {
                let total: f64 = f.iter().sum();
                let mut sizes: Vec<usize> = f
                    .iter()
                    .map(|v| (v / total * self.n_total as f64).floor() as usize)
                    .collect();
                let short = self.n_total - sizes.iter().sum::<usize>();
                for s in sizes.iter_mut().take(short) {
                    *s += 1;
                }
                sizes
            }
        }
    }

    /// Covariate law of centre `centre` (1-based).
    pub fn covariate_law(&self, centre: usize) -> Result<CovariateDistribution> {
        match self.covariate_mode {
            CovariateMode::Identical => Ok(CovariateDistribution::Normal {
                mean: 10.0,
                sd: 1.0,
            }),
            CovariateMode::Different => {
                let laws = self.centre_laws();
                centre
                    .checked_sub(1)
                    .and_then(|i| laws.get(i).copied())
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("centre {centre} has no covariate law"))
                    })
            }
        }
    }
}

/// Covariates of one centre in one replicate.
pub fn generate_covariates(
    config: &ScenarioConfig,
    n: usize,
    centre: usize,
    replicate: u64,
) -> Result<Vec<f64>> {
    let mut rng = stream_rng(
        config.base_seed,
        replicate,
        centre as u64,
        Stream::Covariates,
    );
    config.covariate_law(centre)?.sample(n, &mut rng)
}

/// `p(x) = 1 / (1 + ρ·e^{−(x−10)})`.
pub fn treatment_probability(x: f64, rho: f64) -> f64 {
    expit(x - 10.0 - rho.ln())
}

/// Bernoulli treatments and their true probabilities.
pub fn generate_binary_treatment(
    x: &[f64],
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let p: Vec<f64> = x.iter().map(|&x| treatment_probability(x, rho)).collect();
    let mut a = Vec::with_capacity(x.len());
    for &pi in &p {
        let d = Bernoulli::new(pi).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        a.push(if d.sample(rng) { 1.0 } else { 0.0 });
    }
    Ok((a, p))
}

/// `aᵢ ~ N(xᵢ, sd_a)`.
pub fn generate_continuous_treatment(
    x: &[f64],
    sd_a: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !(sd_a > 0.0 && sd_a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sd_a must be positive, got {sd_a}"
        )));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(x.iter().map(|&x| x + sd_a * z.sample(rng)).collect())
}

/// `log x + sin x + x + a(ψ₀ + ψ₁x)` without noise.
pub fn outcome_mean(x: f64, a: f64, psi: [f64; 2]) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::NonPositiveCovariate(x));
    }
    Ok(x.ln() + x.sin() + x + a * (psi[0] + psi[1] * x))
}

/// Outcomes with standard normal noise; returns `(y, ε)`.
pub fn generate_outcome(
    x: &[f64],
    a: &[f64],
    psi: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != a.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariates, {} treatments",
            x.len(),
            a.len()
        )));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let mut y = Vec::with_capacity(x.len());
    let mut eps = Vec::with_capacity(x.len());
    for (&x, &a) in x.iter().zip(a) {
        let e: f64 = z.sample(rng);
        y.push(outcome_mean(x, a, psi)? + e);
        eps.push(e);
    }
    Ok((y, eps))
}

/// One simulated dataset plus the latent quantities behind it.
#[derive(Debug, Clone)]
pub struct GeneratedReplicate {
    /// Columns `site`, `x`, `a`, `y`.
    pub dataset: Dataset,
    /// True treatment probabilities (binary treatment only).
    pub propensity: Option<Vec<f64>>,
    pub noise: Vec<f64>,
    pub replicate: u64,
    pub base_seed: u64,
}

/// Generates replicate `replicate` of a scenario.
pub fn generate_replicate(config: &ScenarioConfig, replicate: u64) -> Result<GeneratedReplicate> {
    config.validate()?;
    let mut records = Vec::with_capacity(config.n_total);
    let mut propensity = Vec::new();
    let mut noise = Vec::with_capacity(config.n_total);
    for (k, &n) in config.centre_sizes().iter().enumerate() {
        let centre = k + 1;
        let x = generate_covariates(config, n, centre, replicate)?;
        let mut trng = stream_rng(
            config.base_seed,
            replicate,
            centre as u64,
            Stream::Treatment,
        );
        let a = match config.treatment_kind {
            TreatmentKind::Binary => {
                let (a, p) =
                    generate_binary_treatment(&x, config.confounding_level.rho(), &mut trng)?;
                propensity.extend(p);
                a
            }
            TreatmentKind::Continuous => {
                generate_continuous_treatment(&x, config.confounding_level.sd_a(), &mut trng)?
            }
        };
        let mut orng = stream_rng(config.base_seed, replicate, centre as u64, Stream::Outcome);
        let (y, eps) = generate_outcome(&x, &a, config.true_psi, &mut orng)?;
        noise.extend(eps);
        let site = centre.to_string();
        records.extend((0..n).map(|i| SubjectRecord {
            site: site.clone(),
            covariates: vec![x[i]],
            treatment: a[i],
            outcome: y[i],
        }));
    }
    Ok(GeneratedReplicate {
        dataset: Dataset::new(vec!["x".into()], records)?,
        propensity: (config.treatment_kind == TreatmentKind::Binary).then_some(propensity),
        noise,
        replicate,
        base_seed: config.base_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn forty_builtin_scenarios() {
        let all = ScenarioConfig::builtin();
        assert_eq!(all.len(), 40);
        let a = ScenarioConfig::by_id("a").unwrap();
        assert_eq!(a.treatment_kind, TreatmentKind::Binary);
        assert_eq!(a.confounding_level, ConfoundingLevel::VeryLow);
        assert_eq!(a.pool_size_g, 30);
        let t = ScenarioConfig::by_id("t").unwrap();
        assert_eq!(t.covariate_mode, CovariateMode::Different);
        assert_eq!(t.treatment_kind, TreatmentKind::Continuous);
        assert_eq!(ScenarioConfig::by_id("j.ter").unwrap().pool_size_g, 600);
    }

    #[test]
    fn propensity_examples() {
        assert_abs_diff_eq!(treatment_probability(10.0, 1.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            treatment_probability(10.0, 15.0),
            1.0 / 16.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn outcome_examples() {
        let s1 = 1f64.sin();
        assert_abs_diff_eq!(
            outcome_mean(1.0, 0.0, [1.0, 1.0]).unwrap(),
            s1 + 1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            outcome_mean(1.0, 2.0, [1.0, 1.0]).unwrap(),
            s1 + 5.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            outcome_mean(0.0, 0.0, [1.0, 1.0]),
            Err(Error::NonPositiveCovariate(_))
        ));
    }

    #[test]
    fn centre_sizes_sum() {
        let c = ScenarioConfig::by_id("a").unwrap().with_n(6001);
        assert_eq!(c.centre_sizes(), vec![2001, 2000, 2000]);
    }

    #[test]
    fn replicate_is_deterministic() {
        let c = ScenarioConfig::by_id("k").unwrap().with_n(300);
        let a = generate_replicate(&c, 4).unwrap();
        let b = generate_replicate(&c, 4).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let other = generate_replicate(&c, 5).unwrap();
        assert_ne!(a.dataset, other.dataset);
    }

    #[test]
    fn tiny_treatment_sd_tracks_covariate() {
        let x = [9.0, 10.0, 11.5];
        let mut rng = stream_rng(1, 0, 1, Stream::Treatment);
        let a = generate_continuous_treatment(&x, 1e-6, &mut rng).unwrap();
        for (a, x) in a.iter().zip(x) {
            assert!((a - x).abs() < 1e-5);
        }
    }
}
