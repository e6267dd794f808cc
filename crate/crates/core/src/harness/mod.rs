//! Monte Carlo engine: replicate a scenario, estimate ψ with each method
//! under each model-specification scenario, and summarize.

mod metrics;
mod reference;

pub use metrics::{compute_metrics, Metrics};
pub use reference::{
    compare_to_reference, Comparison, ComparisonRow, ReferenceRow, ReferenceTable,
};

use crate::data::{Dataset, Term};
use crate::distributed::{
    aggregate_summaries, compute_site_summary, compute_site_summary_with_weights, solve_distributed,
};
use crate::error::{Error, Result};
use crate::gdwols::{fit_gdwols, BlipEstimate, DesignSpec, Method};
use crate::glm::CONDITION_THRESHOLD;
use crate::pooling::{aggregate, assign_pools, fit_pooled_gdwols, PoolSizes, PoolStrategy};
use crate::simgen::{derived_seed, generate_replicate, ScenarioConfig, Stream};
use crate::weights::{estimate_weights, TreatmentKind, TreatmentModelSpec, WeightVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

/// Which of the two nuisance models is correctly specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum AnalysisScenario {
    BothCorrect = 1,
    TreatmentFreeMisspecified = 2,
    TreatmentMisspecified = 3,
    BothMisspecified = 4,
}

impl From<AnalysisScenario> for u8 {
    fn from(s: AnalysisScenario) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for AnalysisScenario {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        AnalysisScenario::from_id(v).ok_or_else(|| format!("analysis scenario {v} is not 1-4"))
    }
}

impl AnalysisScenario {
    pub const ALL: [AnalysisScenario; 4] = [
        AnalysisScenario::BothCorrect,
        AnalysisScenario::TreatmentFreeMisspecified,
        AnalysisScenario::TreatmentMisspecified,
        AnalysisScenario::BothMisspecified,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn treatment_model_correct(self) -> bool {
        matches!(
            self,
            AnalysisScenario::BothCorrect | AnalysisScenario::TreatmentFreeMisspecified
        )
    }

    pub fn treatment_free_correct(self) -> bool {
        matches!(
            self,
            AnalysisScenario::BothCorrect | AnalysisScenario::TreatmentMisspecified
        )
    }
}

/// Where the distributed method gets its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLocality {
    /// One treatment model on all rows, weights shared with the sites.
    #[default]
    Global,
    /// Each site fits its own treatment model.
    PerSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessOptions {
    /// Sum the treatment-free terms into one column, as a single `tf` regressor.
    pub combined_tf_column: bool,
    pub distributed_weights: WeightLocality,
    pub ipw_cap: Option<f64>,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            combined_tf_column: true,
            distributed_weights: WeightLocality::Global,
            ipw_cap: None,
        }
    }
}

fn x_term() -> Term {
    Term::identity("x")
}

/// Outcome and treatment specifications for one analysis scenario.
///
/// Correct treatment-free model: `log x + sin x + x`; misspecified: `x`.
/// Correct treatment model: logistic on `1, x` (binary) or linear on `x`
/// without intercept (continuous); misspecified: intercept only.
pub fn analysis_specs(
    kind: TreatmentKind,
    scenario: AnalysisScenario,
    options: &HarnessOptions,
) -> (DesignSpec, TreatmentModelSpec) {
    let tf = if scenario.treatment_free_correct() {
        ["log(x)", "sin(x)", "x"]
            .iter()
            .map(|t| t.parse().expect("valid term"))
            .collect()
    } else {
        vec![x_term()]
    };
    let design =
        DesignSpec::linear(tf, vec![x_term()]).with_combined_tf(options.combined_tf_column);
    let treatment = if scenario.treatment_model_correct() {
        let t = TreatmentModelSpec::new(kind, vec![x_term()]);
        match kind {
            TreatmentKind::Binary => t,
            TreatmentKind::Continuous => t.without_intercept(),
        }
    } else {
        TreatmentModelSpec::intercept_only(kind)
    };
    (design, treatment)
}

/// Distributed fit over the sites of `data` with the given weights.
pub fn distributed_fit_with_weights(
    data: &Dataset,
    design: &DesignSpec,
    kind: TreatmentKind,
    weights: &WeightVector,
) -> Result<BlipEstimate> {
    let mut summaries = Vec::new();
    for (_, idx) in data.site_indices() {
        let site = data.subset(&idx);
        let w = WeightVector {
            values: idx.iter().map(|&i| weights.values[i]).collect(),
            ..weights.clone()
        };
        summaries.push(compute_site_summary_with_weights(&site, design, kind, &w)?);
    }
    solve_distributed(&aggregate_summaries(&summaries)?, design)
}

/// Distributed fit with a treatment model fit separately at each site.
pub fn distributed_fit_per_site(
    data: &Dataset,
    design: &DesignSpec,
    treatment: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<BlipEstimate> {
    let summaries = data
        .split_by_site()
        .iter()
        .map(|(_, site)| compute_site_summary(site, design, treatment, cap))
        .collect::<Result<Vec<_>>>()?;
    solve_distributed(&aggregate_summaries(&summaries)?, design)
}

/// Strategy-1 pooling with pool size `g`, then the pooled fit.
pub fn pooled_fit(
    data: &Dataset,
    design: &DesignSpec,
    treatment: &TreatmentModelSpec,
    g: usize,
    pool_seed: u64,
    cap: Option<f64>,
) -> Result<BlipEstimate> {
    let assignment = assign_pools(
        data,
        PoolStrategy::CrossCentre1,
        &PoolSizes::Common(g),
        pool_seed,
    )?;
    let pooled = aggregate(data, &assignment, design, &treatment.covariate_basis)?;
    fit_pooled_gdwols(&pooled, design, &treatment.clone().pooled(), cap)
}

/// One replicate's estimates for every (analysis, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: u64,
    pub analysis: AnalysisScenario,
    pub method: Method,
    pub psi: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// Runs every requested method on one dataset.
pub fn estimate_all(
    data: &Dataset,
    kind: TreatmentKind,
    analyses: &[AnalysisScenario],
    methods: &[Method],
    g: usize,
    pool_seed: u64,
    options: &HarnessOptions,
) -> Vec<(AnalysisScenario, Method, Result<BlipEstimate>)> {
    let mut out = Vec::new();
    for &analysis in analyses {
        let (design, treatment) = analysis_specs(kind, analysis, options);
        let needs_global = methods.contains(&Method::GoldStandard)
            || (methods.contains(&Method::Distributed)
                && options.distributed_weights == WeightLocality::Global);
        let global = needs_global.then(|| estimate_weights(data, &treatment, options.ipw_cap));
        for &method in methods {
            let shared = || match &global {
                Some(Ok(w)) => Ok(w),
                Some(Err(e)) => Err(Error::InvalidArgument(format!("weights: {e}"))),
                None => unreachable!("global weights computed when needed"),
            };
            let result = match method {
                Method::GoldStandard => shared().and_then(|w| fit_gdwols(data, &design, w)),
                Method::Distributed => match options.distributed_weights {
                    WeightLocality::Global => {
                        shared().and_then(|w| distributed_fit_with_weights(data, &design, kind, w))
                    }
                    WeightLocality::PerSite => {
                        distributed_fit_per_site(data, &design, &treatment, options.ipw_cap)
                    }
                },
                Method::Pooled => {
                    pooled_fit(data, &design, &treatment, g, pool_seed, options.ipw_cap)
                }
            };
            out.push((analysis, method, result));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub scenario: ScenarioConfig,
    pub analyses: Vec<AnalysisScenario>,
    pub methods: Vec<Method>,
    pub replicates: u64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub options: HarnessOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub analysis: AnalysisScenario,
    pub parameter: String,
    pub true_value: f64,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub relative_bias_pct: Option<f64>,
    pub absolute_bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub grid: GridSpec,
    pub rows: Vec<MetricsRow>,
    /// Failed replicates are those whose estimation returned an error, for
    /// instance a condition estimate above this threshold.
    pub condition_threshold: f64,
    pub runtime_secs: f64,
    #[serde(skip)]
    pub outcomes: Vec<ReplicateOutcome>,
}

impl MetricsReport {
    pub fn row(
        &self,
        method: Method,
        analysis: AnalysisScenario,
        parameter: &str,
    ) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.analysis == analysis && r.parameter == parameter)
    }

    pub fn write_csv<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(writer, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario",
            "method",
            "analysis",
            "parameter",
            "true_value",
            "n_replicates",
            "n_failed",
            "mean",
            "sd",
            "rel_bias_pct",
            "abs_bias",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                self.grid.scenario.id.clone(),
                r.method.as_str().to_string(),
                r.analysis.id().to_string(),
                r.parameter.clone(),
                r.true_value.to_string(),
                r.n_replicates.to_string(),
                r.n_failed.to_string(),
                opt(r.mean),
                opt(r.sd),
                opt(r.relative_bias_pct),
                opt(r.absolute_bias),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "scenario {}  n={}  reps={}  seed={}  ({:.1}s)\n",
            self.grid.scenario.id,
            self.grid.scenario.n_total,
            self.grid.replicates,
            self.grid.scenario.base_seed,
            self.runtime_secs
        );
        s.push_str(&format!(
            "{:<14} {:>3} {:>5} {:>6} {:>10} {:>10} {:>12}\n",
            "method", "an", "param", "failed", "mean", "sd", "rel bias %"
        ));
        let f =
            |v: Option<f64>, p: usize| v.map(|v| format!("{v:.p$}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14} {:>3} {:>5} {:>6} {:>10} {:>10} {:>12}\n",
                r.method.as_str(),
                r.analysis.id(),
                r.parameter,
                r.n_failed,
                f(r.mean, 3),
                f(r.sd, 3),
                f(r.relative_bias_pct, 3)
            ));
        }
        s
    }
}

fn replicate_outcomes(grid: &GridSpec, replicate: u64) -> Vec<ReplicateOutcome> {
    let failed_all = |e: &Error| {
        grid.analyses
            .iter()
            .flat_map(|&analysis| {
                grid.methods.iter().map(move |&method| ReplicateOutcome {
                    replicate,
                    analysis,
                    method,
                    psi: None,
                    error: Some(e.to_string()),
                })
            })
            .collect()
    };
    let generated = match generate_replicate(&grid.scenario, replicate) {
        Ok(g) => g,
        Err(e) => return failed_all(&e),
    };
    let pool_seed = derived_seed(grid.scenario.base_seed, replicate, 0, Stream::Pooling);
    estimate_all(
        &generated.dataset,
        grid.scenario.treatment_kind,
        &grid.analyses,
        &grid.methods,
        grid.scenario.pool_size_g,
        pool_seed,
        &grid.options,
    )
    .into_iter()
    .map(|(analysis, method, r)| match r {
        Ok(est) => ReplicateOutcome {
            replicate,
            analysis,
            method,
            psi: Some(est.psi),
            error: None,
        },
        Err(e) => ReplicateOutcome {
            replicate,
            analysis,
            method,
            psi: None,
            error: Some(e.to_string()),
        },
    })
    .collect()
}

/// Runs the grid; the result does not depend on `jobs`.
pub fn run_grid(grid: &GridSpec) -> Result<MetricsReport> {
    if grid.replicates == 0 {
        return Err(Error::config("replicates", "need at least one replicate"));
    }
    if grid.analyses.is_empty() || grid.methods.is_empty() {
        return Err(Error::config(
            "grid",
            "need at least one analysis and one method",
        ));
    }
    grid.scenario.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(grid.jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    // Collecting an indexed parallel iterator keeps replicate order.
    let per_rep: Vec<Vec<ReplicateOutcome>> = pool.install(|| {
        (0..grid.replicates)
            .into_par_iter()
            .map(|r| replicate_outcomes(grid, r))
            .collect()
    });
    let outcomes: Vec<ReplicateOutcome> = per_rep.into_iter().flatten().collect();
    let rows = summarize(grid, &outcomes)?;
    Ok(MetricsReport {
        grid: grid.clone(),
        rows,
        condition_threshold: CONDITION_THRESHOLD,
        runtime_secs: start.elapsed().as_secs_f64(),
        outcomes,
    })
}

fn summarize(grid: &GridSpec, outcomes: &[ReplicateOutcome]) -> Result<Vec<MetricsRow>> {
    let truth = grid.scenario.true_psi;
    let mut rows = Vec::new();
    for &method in &grid.methods {
        for &analysis in &grid.analyses {
            let mine: Vec<&ReplicateOutcome> = outcomes
                .iter()
                .filter(|o| o.method == method && o.analysis == analysis)
                .collect();
            let ok: Vec<&Vec<f64>> = mine.iter().filter_map(|o| o.psi.as_ref()).collect();
            for (k, name) in ["psi0", "psi1"].iter().enumerate() {
                let est: Vec<f64> = ok.iter().map(|p| p[k]).collect();
                let m = if est.is_empty() {
                    None
                } else {
                    Some(compute_metrics(&est, truth[k])?)
                };
                rows.push(MetricsRow {
                    method,
                    analysis,
                    parameter: name.to_string(),
                    true_value: truth[k],
                    n_replicates: mine.len(),
                    n_failed: mine.len() - ok.len(),
                    mean: m.map(|m| m.mean),
                    sd: m.and_then(|m| m.sd),
                    relative_bias_pct: m.and_then(|m| m.relative_bias_pct),
                    absolute_bias: m.map(|m| m.absolute_bias),
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_flags() {
        use AnalysisScenario::*;
        assert!(BothCorrect.treatment_model_correct() && BothCorrect.treatment_free_correct());
        assert!(TreatmentFreeMisspecified.treatment_model_correct());
        assert!(!TreatmentFreeMisspecified.treatment_free_correct());
        assert!(!TreatmentMisspecified.treatment_model_correct());
        assert!(TreatmentMisspecified.treatment_free_correct());
        assert!(
            !BothMisspecified.treatment_model_correct()
                && !BothMisspecified.treatment_free_correct()
        );
    }

    #[test]
    fn misspecified_specs() {
        let o = HarnessOptions::default();
        let (d, t) = analysis_specs(TreatmentKind::Continuous, AnalysisScenario::BothCorrect, &o);
        assert_eq!(
            d.column_names(),
            vec!["(intercept)", "log(x)+sin(x)+x", "a", "a:x"]
        );
        assert!(!t.intercept);
        let (d, t) = analysis_specs(
            TreatmentKind::Binary,
            AnalysisScenario::BothMisspecified,
            &o,
        );
        assert_eq!(d.column_names(), vec!["(intercept)", "x", "a", "a:x"]);
        assert!(t.intercept && t.covariate_basis.is_empty());
    }

    #[test]
    fn small_grid_is_job_independent() {
        let scenario = ScenarioConfig::by_id("a").unwrap().with_n(900).with_seed(3);
        let mut grid = GridSpec {
            scenario,
            analyses: vec![AnalysisScenario::BothCorrect],
            methods: vec![Method::GoldStandard, Method::Pooled, Method::Distributed],
            replicates: 4,
            jobs: 1,
            options: HarnessOptions::default(),
        };
        let one = run_grid(&grid).unwrap();
        grid.jobs = 3;
        let three = run_grid(&grid).unwrap();
        assert_eq!(one.rows, three.rows);
    }
}
