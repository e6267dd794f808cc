//! Weighted least squares estimation of blip parameters and the treatment
//! rules they imply.
//!
//! The outcome design is laid out as
//! `[intercept?, treatment-free columns (or one combined column), a, a·x^ψ…]`
//! and, for a quadratic blip, additionally `[a², a²·x^ψ…]`. The blip block is
//! always the trailing columns, so ψ is read off by position and name.

use crate::data::{Dataset, Term};
use crate::error::{Error, Result};
use crate::glm::{self, Matrix, Solver};
use crate::weights::{WeightSummary, WeightVector};
use serde::{Deserialize, Serialize};

pub const INTERCEPT_COLUMN: &str = "(intercept)";
/// Below this, both blip coefficients at `x` count as zero.
pub const FLAT_BLIP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlipOrder {
    #[default]
    LinearInA,
    QuadraticInA,
}

impl BlipOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            BlipOrder::LinearInA => "linear_in_a",
            BlipOrder::QuadraticInA => "quadratic_in_a",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear_in_a" => Some(BlipOrder::LinearInA),
            "quadratic_in_a" => Some(BlipOrder::QuadraticInA),
            _ => None,
        }
    }

    fn blocks(self) -> usize {
        match self {
            BlipOrder::LinearInA => 1,
            BlipOrder::QuadraticInA => 2,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Outcome model layout: treatment-free basis plus blip basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub treatment_free_basis: Vec<Term>,
    #[serde(default)]
    pub blip_covariate_basis: Vec<Term>,
    #[serde(default)]
    pub blip_order: BlipOrder,
    /// Sum the treatment-free terms into one column instead of one per term.
    #[serde(default)]
    pub combined_tf_column: bool,
}

impl DesignSpec {
    pub fn linear(treatment_free_basis: Vec<Term>, blip_covariate_basis: Vec<Term>) -> Self {
        Self {
            intercept: true,
            treatment_free_basis,
            blip_covariate_basis,
            blip_order: BlipOrder::LinearInA,
            combined_tf_column: false,
        }
    }

    pub fn quadratic(treatment_free_basis: Vec<Term>, blip_covariate_basis: Vec<Term>) -> Self {
        Self {
            blip_order: BlipOrder::QuadraticInA,
            ..Self::linear(treatment_free_basis, blip_covariate_basis)
        }
    }

    pub fn with_combined_tf(mut self, combined: bool) -> Self {
        self.combined_tf_column = combined;
        self
    }

    pub fn combined_tf_name(&self) -> String {
        self.treatment_free_basis
            .iter()
            .map(Term::to_string)
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Number of leading (non-blip) columns.
    pub fn psi_offset(&self) -> usize {
        let tf = if self.combined_tf_column {
            usize::from(!self.treatment_free_basis.is_empty())
        } else {
            self.treatment_free_basis.len()
        };
        usize::from(self.intercept) + tf
    }

    pub fn psi_len(&self) -> usize {
        self.blip_order.blocks() * (1 + self.blip_covariate_basis.len())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.intercept {
            names.push(INTERCEPT_COLUMN.to_string());
        }
        if self.combined_tf_column {
            if !self.treatment_free_basis.is_empty() {
                names.push(self.combined_tf_name());
            }
        } else {
            names.extend(self.treatment_free_basis.iter().map(Term::to_string));
        }
        names.push("a".into());
        names.extend(self.blip_covariate_basis.iter().map(|t| format!("a:{t}")));
        if self.blip_order == BlipOrder::QuadraticInA {
            names.push("a2".into());
            names.extend(self.blip_covariate_basis.iter().map(|t| format!("a2:{t}")));
        }
        names
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.column_names();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::config("design", format!("duplicate column `{dup}`")));
        }
        Ok(())
    }

    /// Recovers a spec from a column-name list produced by [`column_names`].
    ///
    /// A combined treatment-free column is recognised by its `+`-joined name.
    ///
    /// [`column_names`]: DesignSpec::column_names
    pub fn from_column_names(columns: &[String]) -> Result<Self> {
        let mut it = columns.iter().peekable();
        let intercept = it.peek().is_some_and(|c| *c == INTERCEPT_COLUMN);
        if intercept {
            it.next();
        }
        let mut tf = Vec::new();
        let mut combined = false;
        while let Some(c) = it.peek() {
            if *c == "a" {
                break;
            }
            if c.contains('+') {
                combined = true;
                for part in c.split('+') {
                    tf.push(part.parse()?);
                }
            } else {
                tf.push(c.parse()?);
            }
            it.next();
        }
        if it.next().map(String::as_str) != Some("a") {
            return Err(Error::MalformedSummary("no treatment column `a`".into()));
        }
        let mut blip = Vec::new();
        let mut order = BlipOrder::LinearInA;
        for c in it {
            if let Some(t) = c.strip_prefix("a:") {
                if order == BlipOrder::QuadraticInA {
                    continue;
                }
                blip.push(t.parse()?);
            } else if c == "a2" {
                order = BlipOrder::QuadraticInA;
            } else if c.starts_with("a2:") {
                continue;
            } else {
                return Err(Error::MalformedSummary(format!("unexpected column `{c}`")));
            }
        }
        let spec = DesignSpec {
            intercept,
            treatment_free_basis: tf,
            blip_covariate_basis: blip,
            blip_order: order,
            combined_tf_column: combined,
        };
        if spec.column_names() != columns {
            return Err(Error::MalformedSummary(
                "column list is not a valid outcome design layout".into(),
            ));
        }
        Ok(spec)
    }
}

/// Outcome design matrix with its column names.
#[derive(Debug, Clone)]
pub struct OutcomeDesign {
    pub matrix: Matrix,
    pub columns: Vec<String>,
}

pub fn build_outcome_design(data: &Dataset, spec: &DesignSpec) -> Result<OutcomeDesign> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    spec.validate()?;
    let tf = spec
        .treatment_free_basis
        .iter()
        .map(|t| data.eval_term(t))
        .collect::<Result<Vec<_>>>()?;
    let blip = spec
        .blip_covariate_basis
        .iter()
        .map(|t| data.eval_term(t))
        .collect::<Result<Vec<_>>>()?;
    let a = data.treatment();
    let columns = spec.column_names();
    let p = columns.len();
    let n = data.len();
    let mut m = Vec::with_capacity(n * p);
    for i in 0..n {
        if spec.intercept {
            m.push(1.0);
        }
        if spec.combined_tf_column {
            if !tf.is_empty() {
                m.push(tf.iter().map(|c| c[i]).sum());
            }
        } else {
            m.extend(tf.iter().map(|c| c[i]));
        }
        m.push(a[i]);
        m.extend(blip.iter().map(|c| a[i] * c[i]));
        if spec.blip_order == BlipOrder::QuadraticInA {
            let a2 = a[i] * a[i];
            m.push(a2);
            m.extend(blip.iter().map(|c| a2 * c[i]));
        }
    }
    Ok(OutcomeDesign {
        matrix: Matrix::new(n, p, m)?,
        columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GoldStandard,
    Pooled,
    Distributed,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::GoldStandard => "gold_standard",
            Method::Pooled => "pooled",
            Method::Distributed => "distributed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub condition_estimate: f64,
    pub solver: Solver,
    pub residual_sd: Option<f64>,
    /// Rows (subjects or pools) entering the final regression.
    pub n: usize,
    pub weights: Option<WeightSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub site_n: Vec<(String, usize)>,
}

/// Fitted outcome model with its blip block pulled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipEstimate {
    pub columns: Vec<String>,
    pub theta: Vec<f64>,
    pub psi_names: Vec<String>,
    pub psi: Vec<f64>,
    /// Model-based; `None` when the residual variance is unavailable.
    pub psi_standard_errors: Option<Vec<f64>>,
    pub method: Method,
    pub blip_order: BlipOrder,
    pub blip_covariate_basis: Vec<Term>,
    pub diagnostics: Diagnostics,
}

impl BlipEstimate {
    pub(crate) fn assemble(
        spec: &DesignSpec,
        theta: Vec<f64>,
        standard_errors: Option<Vec<f64>>,
        method: Method,
        diagnostics: Diagnostics,
    ) -> Self {
        let columns = spec.column_names();
        let off = spec.psi_offset();
        BlipEstimate {
            psi_names: columns[off..].to_vec(),
            psi: theta[off..].to_vec(),
            psi_standard_errors: standard_errors.map(|se| se[off..].to_vec()),
            columns,
            theta,
            method,
            blip_order: spec.blip_order,
            blip_covariate_basis: spec.blip_covariate_basis.clone(),
            diagnostics,
        }
    }

    /// Blip coefficient by column name, e.g. `"a"` or `"a:x"`.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.psi_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.psi[i])
    }

    /// `(ψ₀, ψ₁)` of a linear blip.
    pub fn linear(&self) -> (f64, &[f64]) {
        let k = self.blip_covariate_basis.len();
        (self.psi[0], &self.psi[1..1 + k])
    }

    pub fn quadratic(&self) -> Result<QuadraticBlip> {
        if self.blip_order != BlipOrder::QuadraticInA {
            return Err(Error::NotQuadratic);
        }
        let k = self.blip_covariate_basis.len();
        Ok(QuadraticBlip {
            psi01: self.psi[0],
            psi11: self.psi[1..1 + k].to_vec(),
            psi02: self.psi[1 + k],
            psi12: self.psi[2 + k..2 + 2 * k].to_vec(),
        })
    }

    /// Evaluates the blip basis on one subject's named covariates.
    pub fn blip_covariates(&self, names: &[String], values: &[f64]) -> Result<Vec<f64>> {
        self.blip_covariate_basis
            .iter()
            .map(|t| {
                let j = names
                    .iter()
                    .position(|n| *n == t.covariate)
                    .ok_or_else(|| {
                        Error::UnknownBasisFunction(format!(
                            "covariate `{}` not given",
                            t.covariate
                        ))
                    })?;
                t.apply(values[j])
            })
            .collect()
    }

    /// Treat (1) iff the linear blip at `x_psi` is strictly positive.
    pub fn optimal_binary_rule(&self, x_psi: &[f64]) -> u8 {
        let (psi0, psi1) = self.linear();
        optimal_binary_rule(psi0, psi1, x_psi)
    }
}

/// Fits the outcome model by WLS with the given balancing weights.
pub fn fit_gdwols(
    data: &Dataset,
    spec: &DesignSpec,
    weights: &WeightVector,
) -> Result<BlipEstimate> {
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            weights.len(),
            data.len()
        )));
    }
    let design = build_outcome_design(data, spec)?;
    let y = data.outcome();
    let fit = glm::fit_wls(&design.matrix, &y, &weights.values)?;
    let se = fit.standard_errors();
    Ok(BlipEstimate::assemble(
        spec,
        fit.theta,
        Some(se),
        Method::GoldStandard,
        Diagnostics {
            condition_estimate: fit.condition_estimate,
            solver: fit.solver,
            residual_sd: Some(fit.residual_sd),
            n: data.len(),
            weights: Some(weights.summary()),
            site_n: Vec::new(),
        },
    ))
}

/// `γ(x, a) = a(ψ₀₁ + ψ₁₁ᵀx) + a²(ψ₀₂ + ψ₁₂ᵀx)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBlip {
    pub psi01: f64,
    pub psi11: Vec<f64>,
    pub psi02: f64,
    pub psi12: Vec<f64>,
}

impl QuadraticBlip {
    /// Linear and quadratic coefficients in `a` at `x_psi`.
    pub fn coefficients_at(&self, x_psi: &[f64]) -> (f64, f64) {
        let dot = |c: &[f64]| c.iter().zip(x_psi).map(|(c, x)| c * x).sum::<f64>();
        (self.psi01 + dot(&self.psi11), self.psi02 + dot(&self.psi12))
    }

    pub fn value(&self, x_psi: &[f64], a: f64) -> f64 {
        let (lin, quad) = self.coefficients_at(x_psi);
        a * (lin + quad * a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseRange {
    pub a_min: f64,
    pub a_max: f64,
}

impl DoseRange {
    pub fn new(a_min: f64, a_max: f64) -> Result<Self> {
        if !(a_min.is_finite() && a_max.is_finite() && a_min < a_max) {
            return Err(Error::config(
                "range",
                format!("need finite a_min < a_max, got [{a_min}, {a_max}]"),
            ));
        }
        Ok(Self { a_min, a_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseKind {
    /// Vertex of a downward parabola inside the range.
    Interior,
    /// Whichever range end has the larger blip value.
    Boundary,
    /// Blip is flat in `a`; `a_min` returned by convention.
    FlatBlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseDecision {
    pub dose: f64,
    pub kind: DoseKind,
}

/// Dose maximizing a quadratic blip over `range`.
pub fn optimal_dose(blip: &QuadraticBlip, x_psi: &[f64], range: DoseRange) -> DoseDecision {
    let (lin, quad) = blip.coefficients_at(x_psi);
    if quad.abs() < FLAT_BLIP_TOLERANCE && lin.abs() < FLAT_BLIP_TOLERANCE {
        return DoseDecision {
            dose: range.a_min,
            kind: DoseKind::FlatBlip,
        };
    }
    if quad < 0.0 {
        let vertex = -lin / (2.0 * quad);
        if vertex >= range.a_min && vertex <= range.a_max {
            return DoseDecision {
                dose: vertex,
                kind: DoseKind::Interior,
            };
        }
    }
    let g = |a: f64| a * (lin + quad * a);
    let dose = if g(range.a_max) > g(range.a_min) {
        range.a_max
    } else {
        range.a_min
    };
    DoseDecision {
        dose,
        kind: DoseKind::Boundary,
    }
}

/// 1 iff `ψ₀ + ψ₁ᵀx > 0`; a zero blip means no treatment.
pub fn optimal_binary_rule(psi0: f64, psi1: &[f64], x_psi: &[f64]) -> u8 {
    let gamma = psi0 + psi1.iter().zip(x_psi).map(|(p, x)| p * x).sum::<f64>();
    u8::from(gamma > 0.0)
}
