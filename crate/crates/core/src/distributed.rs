//! Distributed regression: each site ships `XᵀWX` and `XᵀWy`; the
//! coordinator sums them and solves once.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gdwols::{
    build_outcome_design, BlipEstimate, BlipOrder, DesignSpec, Diagnostics, Method,
};
use crate::glm::{self, Matrix};
use crate::weights::{
    estimate_weights, TreatmentKind, TreatmentModelSpec, WeightScheme, WeightVector,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Relative asymmetry tolerated in a received `XᵀWX`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Order-sensitive hash of everything two sites must agree on.
pub fn design_fingerprint(
    columns: &[String],
    blip_order: BlipOrder,
    treatment_kind: TreatmentKind,
    weight_scheme: WeightScheme,
) -> String {
    let mut h = Sha256::new();
    for c in columns {
        h.update(c.as_bytes());
        h.update([0x1f]);
    }
    h.update([0x1e]);
    h.update(blip_order.as_str().as_bytes());
    h.update([0x1e]);
    h.update(treatment_kind.as_str().as_bytes());
    h.update([0x1e]);
    h.update(weight_scheme.as_str().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub site_id: String,
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
    pub blip_order: BlipOrder,
    pub treatment_kind: TreatmentKind,
    pub weight_scheme: WeightScheme,
    pub sum_weights: f64,
    pub xtwx: Matrix,
    pub xtwy: Vec<f64>,
    /// `yᵀWy`, used only for standard errors at the coordinator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ytwy: Option<f64>,
    #[serde(default)]
    pub fingerprint: String,
}

impl SiteSummary {
    /// Fewer rows than columns: the site cannot be solved on its own.
    pub fn is_rank_deficient_alone(&self) -> bool {
        self.n < self.p
    }

    pub fn expected_fingerprint(&self) -> String {
        design_fingerprint(
            &self.columns,
            self.blip_order,
            self.treatment_kind,
            self.weight_scheme,
        )
    }

    fn check_shape(&self) -> Result<()> {
        let bad = |m: String| Error::MalformedSummary(format!("site `{}`: {m}", self.site_id));
        if self.columns.len() != self.p {
            return Err(bad(format!(
                "{} columns but p = {}",
                self.columns.len(),
                self.p
            )));
        }
        if self.xtwx.rows() != self.p || self.xtwx.cols() != self.p || self.xtwy.len() != self.p {
            return Err(bad("matrix sizes do not match p".into()));
        }
        let scale = self
            .xtwx
            .as_slice()
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        if self.xtwx.asymmetry() > SYMMETRY_TOLERANCE * scale {
            return Err(bad("xtwx is not symmetric".into()));
        }
        if !self.sum_weights.is_finite() || self.xtwy.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite entry".into()));
        }
        Ok(())
    }
}

/// Summary from weights supplied by the caller.
pub fn compute_site_summary_with_weights(
    site_data: &Dataset,
    spec: &DesignSpec,
    treatment_kind: TreatmentKind,
    weights: &WeightVector,
) -> Result<SiteSummary> {
    let sites = site_data.site_ids();
    if sites.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "site data must come from one site, found {}",
            sites.len()
        )));
    }
    if weights.len() != site_data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            weights.len(),
            site_data.len()
        )));
    }
    let design = build_outcome_design(site_data, spec)?;
    let y = site_data.outcome();
    let (xtwx, xtwy) = design.matrix.weighted_cross_products(&y, &weights.values);
    let ytwy = y.iter().zip(&weights.values).map(|(y, w)| w * y * y).sum();
    let summary = SiteSummary {
        site_id: sites.into_iter().next().unwrap_or_default(),
        n: site_data.len(),
        p: design.columns.len(),
        fingerprint: design_fingerprint(
            &design.columns,
            spec.blip_order,
            treatment_kind,
            weights.scheme,
        ),
        columns: design.columns,
        blip_order: spec.blip_order,
        treatment_kind,
        weight_scheme: weights.scheme,
        sum_weights: weights.values.iter().sum(),
        xtwx,
        xtwy,
        ytwy: Some(ytwy),
    };
    if summary.is_rank_deficient_alone() {
        log::warn!(
            "site `{}` has n = {} < p = {}; its summary is rank-deficient on its own",
            summary.site_id,
            summary.n,
            summary.p
        );
    }
    Ok(summary)
}

/// Summary with a treatment model fit on this site's rows only.
pub fn compute_site_summary(
    site_data: &Dataset,
    spec: &DesignSpec,
    weight_spec: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<SiteSummary> {
    if weight_spec.pooled {
        return Err(Error::config(
            "treatment.pooled",
            "site summaries use an individual-level treatment model",
        ));
    }
    let weights = estimate_weights(site_data, weight_spec, cap)?;
    compute_site_summary_with_weights(site_data, spec, weight_spec.kind, &weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateState {
    pub columns: Vec<String>,
    pub blip_order: BlipOrder,
    pub treatment_kind: TreatmentKind,
    pub weight_scheme: WeightScheme,
    pub fingerprint: String,
    pub xtwx: Matrix,
    pub xtwy: Vec<f64>,
    /// Present only if every site sent `yᵀWy`.
    pub ytwy: Option<f64>,
    pub sum_weights: f64,
    pub n_total: usize,
    /// `(site_id, n)` in summation order.
    pub sites: Vec<(String, usize)>,
}

/// Sums summaries in sorted site-id order, so the result does not depend on
/// arrival order.
pub fn aggregate_summaries(summaries: &[SiteSummary]) -> Result<AggregateState> {
    let mut sorted: Vec<&SiteSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    let first = *sorted
        .first()
        .ok_or_else(|| Error::InvalidArgument("no site summaries".into()))?;
    for w in sorted.windows(2) {
        if w[0].site_id == w[1].site_id {
            return Err(Error::DuplicateSite(w[0].site_id.clone()));
        }
    }
    for s in &sorted {
        if s.fingerprint.is_empty() {
            return Err(Error::FingerprintMissing);
        }
        if s.fingerprint != first.fingerprint {
            return Err(Error::FingerprintMismatch(
                first.fingerprint.clone(),
                s.fingerprint.clone(),
            ));
        }
        s.check_shape()?;
    }
    let mut xtwx = first.xtwx.clone();
    let mut xtwy = first.xtwy.clone();
    let mut ytwy = first.ytwy;
    let mut sum_weights = first.sum_weights;
    for s in &sorted[1..] {
        xtwx = xtwx.add(&s.xtwx);
        for (acc, v) in xtwy.iter_mut().zip(&s.xtwy) {
            *acc += v;
        }
        ytwy = ytwy.zip(s.ytwy).map(|(a, b)| a + b);
        sum_weights += s.sum_weights;
    }
    Ok(AggregateState {
        columns: first.columns.clone(),
        blip_order: first.blip_order,
        treatment_kind: first.treatment_kind,
        weight_scheme: first.weight_scheme,
        fingerprint: first.fingerprint.clone(),
        xtwx,
        xtwy,
        ytwy,
        sum_weights,
        n_total: sorted.iter().map(|s| s.n).sum(),
        sites: sorted.iter().map(|s| (s.site_id.clone(), s.n)).collect(),
    })
}

/// Solves the summed normal equations.
pub fn solve_distributed(agg: &AggregateState, spec: &DesignSpec) -> Result<BlipEstimate> {
    if spec.column_names() != agg.columns || spec.blip_order != agg.blip_order {
        return Err(Error::config(
            "design",
            "does not match the columns the sites summarized",
        ));
    }
    let sol = glm::solve_normal_equations(&agg.xtwx, &agg.xtwy).map_err(|e| match e {
        Error::SingularDesign {
            condition,
            threshold,
            ..
        } => Error::SingularDesign {
            condition,
            threshold,
            context: format!(
                " (site sizes: {})",
                agg.sites
                    .iter()
                    .map(|(s, n)| format!("{s}={n}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        },
        other => other,
    })?;
    let p = agg.columns.len();
    let (residual_sd, se) = match agg.ytwy {
        Some(ytwy) if agg.n_total > p => {
            let fitted_part: f64 = sol.theta.iter().zip(&agg.xtwy).map(|(t, v)| t * v).sum();
            let rss = (ytwy - fitted_part).max(0.0);
            let s2 = rss / (agg.n_total - p) as f64;
            let se = (0..p)
                .map(|i| (s2 * sol.inverse[(i, i)]).max(0.0).sqrt())
                .collect();
            (Some(s2.sqrt()), Some(se))
        }
        _ => (None, None),
    };
    Ok(BlipEstimate::assemble(
        spec,
        sol.theta,
        se,
        Method::Distributed,
        Diagnostics {
            condition_estimate: sol.condition_estimate,
            solver: sol.solver,
            residual_sd,
            n: agg.n_total,
            weights: None,
            site_n: agg.sites.clone(),
        },
    ))
}

/// JSON encoding; doubles are written in shortest round-trip form.
pub fn serialize_summary(s: &SiteSummary) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec_pretty(s)?)
}

/// Parses and verifies a summary, including its fingerprint.
pub fn deserialize_summary(bytes: &[u8]) -> Result<SiteSummary> {
    let s: SiteSummary =
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedSummary(e.to_string()))?;
    if s.fingerprint.is_empty() {
        return Err(Error::FingerprintMissing);
    }
    s.check_shape()?;
    let expected = s.expected_fingerprint();
    if s.fingerprint != expected {
        return Err(Error::FingerprintMismatch(s.fingerprint, expected));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(site: &str, xtwx: f64, xtwy: f64) -> SiteSummary {
        let columns = vec!["a".to_string()];
        SiteSummary {
            site_id: site.into(),
            n: 1,
            p: 1,
            fingerprint: design_fingerprint(
                &columns,
                BlipOrder::LinearInA,
                TreatmentKind::Binary,
                WeightScheme::Supplied,
            ),
            columns,
            blip_order: BlipOrder::LinearInA,
            treatment_kind: TreatmentKind::Binary,
            weight_scheme: WeightScheme::Supplied,
            sum_weights: 1.0,
            xtwx: Matrix::from_rows(&[[xtwx]]).unwrap(),
            xtwy: vec![xtwy],
            ytwy: None,
        }
    }

    fn spec() -> DesignSpec {
        DesignSpec {
            intercept: false,
            ..DesignSpec::linear(vec![], vec![])
        }
    }

    #[test]
    fn single_summary_solves() {
        let agg = aggregate_summaries(&[summary("1", 2.0, 3.0)]).unwrap();
        let est = solve_distributed(&agg, &spec()).unwrap();
        assert!((est.theta[0] - 1.5).abs() < 1e-15);
        assert_eq!(est.method, Method::Distributed);
    }

    #[test]
    fn sums_are_elementwise() {
        let agg = aggregate_summaries(&[summary("b", 2.0, 1.0), summary("a", 1.0, 1.0)]).unwrap();
        assert_eq!(agg.xtwx.as_slice(), &[3.0]);
        assert_eq!(agg.sites[0].0, "a");
    }

    #[test]
    fn duplicate_site_rejected() {
        assert!(matches!(
            aggregate_summaries(&[summary("a", 1.0, 1.0), summary("a", 1.0, 1.0)]),
            Err(Error::DuplicateSite(_))
        ));
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let mut b = summary("b", 1.0, 1.0);
        b.weight_scheme = WeightScheme::AbsResidualBinary;
        b.fingerprint = b.expected_fingerprint();
        assert!(matches!(
            aggregate_summaries(&[summary("a", 1.0, 1.0), b]),
            Err(Error::FingerprintMismatch(..))
        ));
    }

    #[test]
    fn truncated_payload_is_malformed() {
        let bytes = serialize_summary(&summary("a", 2.0, 3.0)).unwrap();
        assert!(matches!(
            deserialize_summary(&bytes[..bytes.len() / 2]),
            Err(Error::MalformedSummary(_))
        ));
    }

    #[test]
    fn tampered_fingerprint_detected() {
        let mut s = summary("a", 2.0, 3.0);
        s.fingerprint = "00".into();
        let bytes = serialize_summary(&s).unwrap();
        assert!(matches!(
            deserialize_summary(&bytes),
            Err(Error::FingerprintMismatch(..))
        ));
    }
}
