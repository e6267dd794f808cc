//! Covariate microaggregation: random pools of subjects whose rows are
//! replaced by within-pool sums, and G-dWOLS on the pooled rows.

use crate::data::{Dataset, Term};
use crate::error::{Error, Result};
use crate::gdwols::{BlipEstimate, BlipOrder, DesignSpec, Diagnostics, Method, OutcomeDesign};
use crate::glm::{self, Matrix};
use crate::weights::{estimate_pooled_weights, TreatmentModelSpec, WeightVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolStrategy {
    /// Pools of size g drawn across all centres.
    CrossCentre1,
    /// Each centre forms its own pools of a common size g.
    PerCentreCommonG2,
    /// Each centre forms its own pools of size g_k.
    PerCentreVaryingG3,
}

impl PoolStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolStrategy::CrossCentre1 => "cross_centre_1",
            PoolStrategy::PerCentreCommonG2 => "per_centre_common_g_2",
            PoolStrategy::PerCentreVaryingG3 => "per_centre_varying_g_3",
        }
    }

    /// Accepts the tag or the bare number `1`, `2`, `3`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1" | "cross_centre_1" => Some(PoolStrategy::CrossCentre1),
            "2" | "per_centre_common_g_2" => Some(PoolStrategy::PerCentreCommonG2),
            "3" | "per_centre_varying_g_3" => Some(PoolStrategy::PerCentreVaryingG3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolSizes {
    Common(usize),
    PerCentre(BTreeMap<String, usize>),
}

impl PoolSizes {
    fn for_centre(&self, centre: &str) -> Result<usize> {
        match self {
            PoolSizes::Common(g) => Ok(*g),
            PoolSizes::PerCentre(m) => m
                .get(centre)
                .copied()
                .ok_or_else(|| Error::ConfigMissing(format!("pool size for centre `{centre}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolAssignment {
    pub strategy: PoolStrategy,
    /// Pool id of each subject, `None` for excluded subjects.
    pub pool_of: Vec<Option<usize>>,
    pub excluded: Vec<usize>,
    /// Member subject indices per pool id, ascending. Within a centre, pool
    /// ids are ordered by lowest member.
    pub members: Vec<Vec<usize>>,
    pub seed: u64,
}

impl PoolAssignment {
    pub fn n_pools(&self) -> usize {
        self.members.len()
    }

    pub fn pool_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Randomly partitions subjects into pools; leftovers are excluded at random.
pub fn assign_pools(
    data: &Dataset,
    strategy: PoolStrategy,
    sizes: &PoolSizes,
    seed: u64,
) -> Result<PoolAssignment> {
    if data.is_empty() {
        return Err(Error::EmptyCentre("(all)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<(String, Vec<usize>, usize)> = Vec::new();
    match strategy {
        PoolStrategy::CrossCentre1 => {
            let g = match sizes {
                PoolSizes::Common(g) => *g,
                PoolSizes::PerCentre(_) => {
                    return Err(Error::config("g", "strategy 1 takes a single pool size"))
                }
            };
            groups.push(("(all)".into(), (0..data.len()).collect(), g));
        }
        PoolStrategy::PerCentreCommonG2 | PoolStrategy::PerCentreVaryingG3 => {
            if strategy == PoolStrategy::PerCentreCommonG2 && !matches!(sizes, PoolSizes::Common(_))
            {
                return Err(Error::config("g", "strategy 2 takes a single pool size"));
            }
            let sites = data.site_indices();
            if let PoolSizes::PerCentre(m) = sizes {
                if let Some(c) = m.keys().find(|c| !sites.contains_key(*c)) {
                    return Err(Error::EmptyCentre(c.clone()));
                }
            }
            for (site, idx) in sites {
                let g = sizes.for_centre(&site)?;
                groups.push((site, idx, g));
            }
        }
    }

    let mut pool_of = vec![None; data.len()];
    let mut excluded = Vec::new();
    let mut members = Vec::new();
    for (centre, mut idx, g) in groups {
        if g == 0 {
            return Err(Error::config("g", "pool size must be at least 1"));
        }
        if g > idx.len() {
            return Err(Error::PoolSizeExceedsCentre {
                centre,
                g,
                n: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let drop = idx.len() % g;
        excluded.extend_from_slice(&idx[..drop]);
        let mut pools: Vec<Vec<usize>> = idx[drop..]
            .chunks(g)
            .map(|chunk| {
                let mut m = chunk.to_vec();
                m.sort_unstable();
                m
            })
            .collect();
        // Ids follow each pool's lowest member so that g = 1 keeps row order
        // and reproduces the individual-level arithmetic exactly.
        pools.sort_unstable_by_key(|m| m[0]);
        for m in pools {
            let id = members.len();
            for &i in &m {
                pool_of[i] = Some(id);
            }
            members.push(m);
        }
    }
    excluded.sort_unstable();
    Ok(PoolAssignment {
        strategy,
        pool_of,
        excluded,
        members,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledRow {
    pub pool_id: usize,
    pub pool_size: usize,
    pub y_pool: f64,
    /// Σ of each summed term, aligned with `PooledDataset::sum_terms`.
    pub sums: Vec<f64>,
    pub a_pool: f64,
    /// Σaᵢxᵢ^ψ / Σaᵢ per blip term (0 when Σa = 0).
    pub x_psi_weighted: Vec<f64>,
    /// Σaᵢ², quadratic blips only.
    pub a2_pool: Option<f64>,
    /// Σaᵢ²xᵢ^ψ / Σaᵢ², quadratic blips only.
    pub x_psi_weighted2: Option<Vec<f64>>,
    /// Σaᵢxᵢ^ψ, kept so the interaction column is an exact sum.
    ax_sums: Vec<f64>,
    a2x_sums: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledDataset {
    pub sum_terms: Vec<Term>,
    pub blip_terms: Vec<Term>,
    pub quadratic: bool,
    pub rows: Vec<PooledRow>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl PooledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Pool sums of one aggregated term.
    pub fn sums_of(&self, term: &Term) -> Result<Vec<f64>> {
        let j = self
            .sum_terms
            .iter()
            .position(|t| t == term)
            .ok_or_else(|| Error::UnknownBasisFunction(format!("{term} was not aggregated")))?;
        Ok(self.rows.iter().map(|r| r.sums[j]).collect())
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y_pool).collect()
    }

    /// CSV header: pool_id, pool_size, y_pool, summed terms, a_pool, then
    /// `xw:<term>` (and `a2_pool`, `xw2:<term>` for quadratic blips).
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = vec!["pool_id".into(), "pool_size".into(), "y_pool".into()];
        h.extend(self.sum_terms.iter().map(Term::to_string));
        h.push("a_pool".into());
        h.extend(self.blip_terms.iter().map(|t| format!("xw:{t}")));
        if self.quadratic {
            h.push("a2_pool".into());
            h.extend(self.blip_terms.iter().map(|t| format!("xw2:{t}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(writer, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.csv_header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.pool_id.to_string(),
                r.pool_size.to_string(),
                r.y_pool.to_string(),
            ];
            rec.extend(r.sums.iter().map(f64::to_string));
            rec.push(r.a_pool.to_string());
            rec.extend(r.x_psi_weighted.iter().map(f64::to_string));
            if let (Some(a2), Some(xw2)) = (r.a2_pool, &r.x_psi_weighted2) {
                rec.push(a2.to_string());
                rec.extend(xw2.iter().map(f64::to_string));
            }
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let bad = |m: String| Error::config("pooled csv", m);
        if header.len() < 4 || header[..3] != ["pool_id", "pool_size", "y_pool"] {
            return Err(bad("header must start with pool_id,pool_size,y_pool".into()));
        }
        let a_at = header
            .iter()
            .position(|h| h == "a_pool")
            .ok_or_else(|| bad("missing a_pool column".into()))?;
        let sum_terms = header[3..a_at]
            .iter()
            .map(|h| h.parse())
            .collect::<Result<Vec<Term>>>()?;
        let mut blip_terms = Vec::new();
        let mut quadratic = false;
        for h in &header[a_at + 1..] {
            if h == "a2_pool" {
                quadratic = true;
            } else if let Some(t) = h.strip_prefix("xw:") {
                blip_terms.push(t.parse()?);
            } else if !h.starts_with("xw2:") {
                return Err(bad(format!("unexpected column `{h}`")));
            }
        }
        let k = blip_terms.len();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                let s = rec.get(j).unwrap_or("");
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("row {}: column `{}` = `{s}`", line + 1, header[j])))
            };
            if rec.len() != header.len() {
                return Err(bad(format!("row {} has {} fields", line + 1, rec.len())));
            }
            let a_pool = num(a_at)?;
            let xw = (0..k)
                .map(|j| num(a_at + 1 + j))
                .collect::<Result<Vec<_>>>()?;
            let (a2_pool, xw2) = if quadratic {
                let a2 = num(a_at + 1 + k)?;
                let v = (0..k)
                    .map(|j| num(a_at + 2 + k + j))
                    .collect::<Result<Vec<_>>>()?;
                (Some(a2), Some(v))
            } else {
                (None, None)
            };
            let pool_size = num(1)?;
            if pool_size < 1.0 || pool_size.fract() != 0.0 {
                return Err(bad(format!("row {}: pool_size {pool_size}", line + 1)));
            }
            rows.push(PooledRow {
                pool_id: num(0)? as usize,
                pool_size: pool_size as usize,
                y_pool: num(2)?,
                sums: (3..a_at).map(num).collect::<Result<Vec<_>>>()?,
                ax_sums: xw.iter().map(|x| a_pool * x).collect(),
                a2x_sums: match (&a2_pool, &xw2) {
                    (Some(a2), Some(v)) => v.iter().map(|x| a2 * x).collect(),
                    _ => Vec::new(),
                },
                a_pool,
                x_psi_weighted: xw,
                a2_pool,
                x_psi_weighted2: xw2,
            });
        }
        Ok(PooledDataset {
            sum_terms,
            blip_terms,
            quadratic,
            rows,
        })
    }
}

/// Collapses each pool to one row of sums.
///
/// Summed terms are the treatment-free basis of `spec` followed by any
/// `extra_terms` (typically the treatment-model basis) not already present.
pub fn aggregate(
    data: &Dataset,
    assignment: &PoolAssignment,
    spec: &DesignSpec,
    extra_terms: &[Term],
) -> Result<PooledDataset> {
    if assignment.pool_of.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} subjects, data has {}",
            assignment.pool_of.len(),
            data.len()
        )));
    }
    let mut sum_terms: Vec<Term> = Vec::new();
    for t in spec.treatment_free_basis.iter().chain(extra_terms) {
        if !sum_terms.contains(t) {
            sum_terms.push(t.clone());
        }
    }
    let blip_terms = spec.blip_covariate_basis.clone();
    let quadratic = spec.blip_order == BlipOrder::QuadraticInA;
    let sum_cols = sum_terms
        .iter()
        .map(|t| data.eval_term(t))
        .collect::<Result<Vec<_>>>()?;
    let blip_cols = blip_terms
        .iter()
        .map(|t| data.eval_term(t))
        .collect::<Result<Vec<_>>>()?;
    let a = data.treatment();
    let y = data.outcome();

    let rows = assignment
        .members
        .iter()
        .enumerate()
        .map(|(id, m)| {
            let y_pool = m.iter().map(|&i| y[i]).sum();
            let sums = sum_cols
                .iter()
                .map(|c| m.iter().map(|&i| c[i]).sum())
                .collect();
            let a_pool: f64 = m.iter().map(|&i| a[i]).sum();
            let ax_sums: Vec<f64> = blip_cols
                .iter()
                .map(|c| m.iter().map(|&i| a[i] * c[i]).sum())
                .collect();
            let x_psi_weighted = ax_sums.iter().map(|s| ratio(*s, a_pool)).collect();
            let (a2_pool, a2x_sums, x_psi_weighted2) = if quadratic {
                let a2: f64 = m.iter().map(|&i| a[i] * a[i]).sum();
                let s: Vec<f64> = blip_cols
                    .iter()
                    .map(|c| m.iter().map(|&i| a[i] * a[i] * c[i]).sum())
                    .collect();
                let w = s.iter().map(|v| ratio(*v, a2)).collect();
                (Some(a2), s, Some(w))
            } else {
                (None, Vec::new(), None)
            };
            PooledRow {
                pool_id: id,
                pool_size: m.len(),
                y_pool,
                sums,
                a_pool,
                x_psi_weighted,
                a2_pool,
                x_psi_weighted2,
                ax_sums,
                a2x_sums,
            }
        })
        .collect();
    Ok(PooledDataset {
        sum_terms,
        blip_terms,
        quadratic,
        rows,
    })
}

/// Pooled outcome design with the same column names as the individual one.
///
/// The intercept column carries the pool size, so fits with varying pool
/// sizes keep the per-subject intercept.
pub fn pooled_outcome_design(pooled: &PooledDataset, spec: &DesignSpec) -> Result<OutcomeDesign> {
    spec.validate()?;
    if pooled.is_empty() {
        return Err(Error::InvalidArgument("no pools".into()));
    }
    if spec.blip_covariate_basis != pooled.blip_terms {
        return Err(Error::config(
            "design.blip_covariate_basis",
            "differs from the basis the pools were aggregated with",
        ));
    }
    let quadratic = spec.blip_order == BlipOrder::QuadraticInA;
    if quadratic && !pooled.quadratic {
        return Err(Error::config(
            "design.blip_order",
            "pools were aggregated for a linear blip",
        ));
    }
    let tf = spec
        .treatment_free_basis
        .iter()
        .map(|t| pooled.sums_of(t))
        .collect::<Result<Vec<_>>>()?;
    let columns = spec.column_names();
    let mut m = Vec::with_capacity(pooled.len() * columns.len());
    for (i, r) in pooled.rows.iter().enumerate() {
        if spec.intercept {
            m.push(r.pool_size as f64);
        }
        if spec.combined_tf_column {
            if !tf.is_empty() {
                m.push(tf.iter().map(|c| c[i]).sum());
            }
        } else {
            m.extend(tf.iter().map(|c| c[i]));
        }
        m.push(r.a_pool);
        m.extend(&r.ax_sums);
        if quadratic {
            m.push(r.a2_pool.unwrap_or(0.0));
            m.extend(&r.a2x_sums);
        }
    }
    Ok(OutcomeDesign {
        matrix: Matrix::new(pooled.len(), columns.len(), m)?,
        columns,
    })
}

/// WLS on pooled rows with given weights.
pub fn fit_pooled_with_weights(
    pooled: &PooledDataset,
    spec: &DesignSpec,
    weights: &WeightVector,
) -> Result<BlipEstimate> {
    if weights.len() != pooled.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} pools",
            weights.len(),
            pooled.len()
        )));
    }
    let design = pooled_outcome_design(pooled, spec)?;
    let fit = glm::fit_wls(&design.matrix, &pooled.outcome(), &weights.values)?;
    let se = fit.standard_errors();
    Ok(BlipEstimate::assemble(
        spec,
        fit.theta,
        Some(se),
        Method::Pooled,
        Diagnostics {
            condition_estimate: fit.condition_estimate,
            solver: fit.solver,
            residual_sd: Some(fit.residual_sd),
            n: pooled.len(),
            weights: Some(weights.summary()),
            site_n: Vec::new(),
        },
    ))
}

/// Pooled treatment model, pooled weights, pooled WLS.
pub fn fit_pooled_gdwols(
    pooled: &PooledDataset,
    spec: &DesignSpec,
    weight_spec: &TreatmentModelSpec,
    cap: Option<f64>,
) -> Result<BlipEstimate> {
    if !weight_spec.pooled {
        return Err(Error::config(
            "treatment.pooled",
            "pooled fit needs a pooled treatment model",
        ));
    }
    let weights = estimate_pooled_weights(pooled, weight_spec, cap)?;
    fit_pooled_with_weights(pooled, spec, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;

    fn data(rows: &[(&str, f64, f64, f64)]) -> Dataset {
        Dataset::new(
            vec!["x".into()],
            rows.iter()
                .map(|&(s, x, a, y)| SubjectRecord {
                    site: s.into(),
                    covariates: vec![x],
                    treatment: a,
                    outcome: y,
                })
                .collect(),
        )
        .unwrap()
    }

    fn x() -> Vec<Term> {
        vec![Term::identity("x")]
    }

    fn sized(sizes: &[usize]) -> Dataset {
        let mut rows = Vec::new();
        for (k, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                rows.push((["1", "2", "3"][k], i as f64 + 1.0, 0.0, 0.0));
            }
        }
        data(&rows)
    }

    #[test]
    fn aggregates_two_row_pool() {
        let d = data(&[("1", 1.0, 0.0, 1.0), ("1", 3.0, 2.0, 5.0)]);
        let asg = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(2), 0).unwrap();
        let p = aggregate(&d, &asg, &DesignSpec::linear(x(), x()), &[]).unwrap();
        let r = &p.rows[0];
        assert_eq!((r.y_pool, r.sums[0], r.a_pool), (6.0, 4.0, 2.0));
        assert_eq!(r.x_psi_weighted, vec![3.0]);
    }

    #[test]
    fn untreated_pool_has_zero_weighted_covariate() {
        let d = data(&[("1", 1.0, 0.0, 1.0), ("1", 3.0, 0.0, 5.0)]);
        let asg = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(2), 0).unwrap();
        let p = aggregate(&d, &asg, &DesignSpec::linear(x(), x()), &[]).unwrap();
        assert_eq!(p.rows[0].a_pool, 0.0);
        assert_eq!(p.rows[0].x_psi_weighted, vec![0.0]);
    }

    #[test]
    fn strategy_counts_on_small_centres() {
        let d = sized(&[4, 6, 15]);
        let s2 = assign_pools(
            &d,
            PoolStrategy::PerCentreCommonG2,
            &PoolSizes::Common(3),
            7,
        )
        .unwrap();
        assert_eq!((s2.n_pools(), s2.excluded.len()), (8, 1));
        let gk = PoolSizes::PerCentre(
            [("1", 2), ("2", 3), ("3", 5)]
                .into_iter()
                .map(|(c, g)| (c.to_string(), g))
                .collect(),
        );
        let s3 = assign_pools(&d, PoolStrategy::PerCentreVaryingG3, &gk, 7).unwrap();
        assert_eq!((s3.n_pools(), s3.excluded.len()), (7, 0));
        let s1 = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(5), 7).unwrap();
        assert_eq!((s1.n_pools(), s1.excluded.len()), (5, 0));
    }

    #[test]
    fn oversize_pool_is_rejected() {
        let d = sized(&[2, 6]);
        assert!(matches!(
            assign_pools(
                &d,
                PoolStrategy::PerCentreCommonG2,
                &PoolSizes::Common(3),
                0
            ),
            Err(Error::PoolSizeExceedsCentre { g: 3, n: 2, .. })
        ));
    }

    #[test]
    fn unknown_centre_in_sizes_is_empty_centre() {
        let d = sized(&[4]);
        let gk = PoolSizes::PerCentre([("1".to_string(), 2), ("9".to_string(), 2)].into());
        assert!(matches!(
            assign_pools(&d, PoolStrategy::PerCentreVaryingG3, &gk, 0),
            Err(Error::EmptyCentre(c)) if c == "9"
        ));
    }

    #[test]
    fn assignment_is_seeded() {
        let d = sized(&[4, 6, 15]);
        let a = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(3), 11).unwrap();
        let b = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(3), 11).unwrap();
        let c = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(3), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.members, c.members);
    }

    #[test]
    fn csv_round_trip() {
        let d = data(&[
            ("1", 1.5, 0.25, 1.0),
            ("1", 3.0, 2.0, 5.0),
            ("1", 2.0, 0.0, 4.0),
            ("1", 7.0, 1.0, 0.1),
        ]);
        let asg = assign_pools(&d, PoolStrategy::CrossCentre1, &PoolSizes::Common(2), 3).unwrap();
        let spec = DesignSpec::quadratic(vec!["log(x)".parse().unwrap()], x());
        let p = aggregate(&d, &asg, &spec, &x()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, &["test".into()]).unwrap();
        let back = PooledDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.sum_terms, p.sum_terms);
        assert_eq!(back.csv_header(), p.csv_header());
        for (a, b) in back.rows.iter().zip(&p.rows) {
            assert_eq!(a.sums, b.sums);
            assert_eq!(a.x_psi_weighted2, b.x_psi_weighted2);
        }
    }
}
