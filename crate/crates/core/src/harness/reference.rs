use super::{AnalysisScenario, MetricsReport};
use crate::error::{Error, Result};
use crate::gdwols::Method;
use crate::simgen::CovariateMode;
use crate::weights::TreatmentKind;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const BINARY_IDENTICAL: &str = include_str!("../../reference/binary_identical.csv");
const CONTINUOUS_IDENTICAL: &str = include_str!("../../reference/continuous_identical.csv");
const BINARY_DIFFERENT: &str = include_str!("../../reference/binary_different.csv");
const CONTINUOUS_DIFFERENT: &str = include_str!("../../reference/continuous_different.csv");

/// Subjects per dataset behind the published rows.
pub const REFERENCE_N_TOTAL: usize = 60_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: Method,
    pub scenario: String,
    pub confounding_level: String,
    pub analysis: AnalysisScenario,
    pub true_psi0: f64,
    pub mean_psi0: f64,
    pub sd_psi0: f64,
    pub rel_bias_pct: f64,
    pub n_reps: usize,
    pub n_nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    pub provenance: Vec<String>,
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceTable {
    pub fn read_csv<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let provenance = text
            .lines()
            .filter_map(|l| l.strip_prefix("# "))
            .map(str::to_string)
            .collect();
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ReferenceRow>, _>>()?;
        Ok(Self { provenance, rows })
    }

    /// Shipped published results for one treatment kind and covariate mode.
    pub fn builtin(kind: TreatmentKind, mode: CovariateMode) -> Self {
        let text = match (kind, mode) {
            (TreatmentKind::Binary, CovariateMode::Identical) => BINARY_IDENTICAL,
            (TreatmentKind::Continuous, CovariateMode::Identical) => CONTINUOUS_IDENTICAL,
            (TreatmentKind::Binary, CovariateMode::Different) => BINARY_DIFFERENT,
            (TreatmentKind::Continuous, CovariateMode::Different) => CONTINUOUS_DIFFERENT,
        };
        Self::read_csv(text.as_bytes()).expect("built-in reference table parses")
    }

    pub fn find(
        &self,
        method: Method,
        scenario: &str,
        analysis: AnalysisScenario,
    ) -> Option<&ReferenceRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.scenario == scenario && r.analysis == analysis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub analysis: AnalysisScenario,
    pub reference_mean: f64,
    pub reference_sd: f64,
    pub reference_rel_bias_pct: f64,
    /// Reference SD rescaled to the run's sample size.
    pub reference_sd_scaled: f64,
    pub run_mean: Option<f64>,
    pub run_sd: Option<f64>,
    pub run_rel_bias_pct: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
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
            "ref_mean",
            "ref_sd",
            "ref_sd_scaled",
            "ref_rel_bias_pct",
            "run_mean",
            "run_sd",
            "run_rel_bias_pct",
            "tolerance",
            "pass",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                self.scenario.clone(),
                r.method.as_str().into(),
                r.analysis.id().to_string(),
                r.reference_mean.to_string(),
                r.reference_sd.to_string(),
                r.reference_sd_scaled.to_string(),
                r.reference_rel_bias_pct.to_string(),
                opt(r.run_mean),
                opt(r.run_sd),
                opt(r.run_rel_bias_pct),
                r.tolerance.to_string(),
                if r.pass { "PASS" } else { "FAIL" }.into(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>3} {:>10} {:>10} {:>10} {:>10} {:>8} {:>5}\n",
            "method", "an", "ref mean", "run mean", "ref sd*", "run sd", "tol", ""
        );
        let f = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14} {:>3} {:>10.3} {:>10} {:>10.3} {:>10} {:>8.3} {:>5}\n",
                r.method.as_str(),
                r.analysis.id(),
                r.reference_mean,
                f(r.run_mean),
                r.reference_sd_scaled,
                f(r.run_sd),
                r.tolerance,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        s.push_str("(* reference SD rescaled to the run's sample size)\n");
        s
    }
}

/// Side-by-side ψ₀ comparison with the published rows.
///
/// A row passes when the run mean is within
/// `3·√(σ²·(N_ref/N_run)/R_run + σ²/R_ref) + 0.02·|ψ₀|` of the published
/// mean, σ being the published SD: three combined Monte Carlo standard
/// errors (the reference SD rescaled by √N for the run) plus a 2% margin
/// for finite-sample effects that do not shrink with replicates.
pub fn compare_to_reference(report: &MetricsReport, table: &ReferenceTable) -> Result<Comparison> {
    let scenario = &report.grid.scenario;
    let run_n = scenario.n_total as f64;
    let mut rows = Vec::new();
    for r in report.rows.iter().filter(|r| r.parameter == "psi0") {
        let key = format!(
            "method {} scenario {} analysis {}",
            r.method.as_str(),
            scenario.id,
            r.analysis.id()
        );
        let reference = table
            .find(r.method, &scenario.id, r.analysis)
            .ok_or(Error::MissingReferenceRow(key))?;
        let scale = REFERENCE_N_TOTAL as f64 / run_n;
        let sd2 = reference.sd_psi0.powi(2);
        let ok_reps = (r.n_replicates - r.n_failed).max(1) as f64;
        let ref_reps = (reference.n_reps - reference.n_nonconverged).max(1) as f64;
        let tolerance = 3.0 * (sd2 * scale / ok_reps + sd2 / ref_reps).sqrt()
            + 0.02 * reference.true_psi0.abs();
        rows.push(ComparisonRow {
            method: r.method,
            analysis: r.analysis,
            reference_mean: reference.mean_psi0,
            reference_sd: reference.sd_psi0,
            reference_rel_bias_pct: reference.rel_bias_pct,
            reference_sd_scaled: reference.sd_psi0 * scale.sqrt(),
            run_mean: r.mean,
            run_sd: r.sd,
            run_rel_bias_pct: r.relative_bias_pct,
            tolerance,
            pass: r
                .mean
                .is_some_and(|m| (m - reference.mean_psi0).abs() <= tolerance),
        });
    }
    if rows.is_empty() {
        return Err(Error::MissingReferenceRow(format!(
            "scenario {}: report has no psi0 rows",
            scenario.id
        )));
    }
    Ok(Comparison {
        scenario: scenario.id.clone(),
        rows,
    })
}
