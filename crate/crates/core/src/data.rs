//! Individual-level records, named basis terms, and CSV interchange.
//!
//! CSV layout: a `site` column, one column per covariate, the treatment `a`
//! and the outcome `y`. Column order is free; lines starting with `#` carry
//! provenance and are skipped on read.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

pub const SITE_COLUMN: &str = "site";
pub const TREATMENT_COLUMN: &str = "a";
pub const OUTCOME_COLUMN: &str = "y";

/// Elementwise transform applied to one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisFn {
    Identity,
    Log,
    Sin,
    Cos,
    Exp,
    Square,
    Sqrt,
}

impl BasisFn {
    fn prefix(self) -> Option<&'static str> {
        match self {
            BasisFn::Identity => None,
            BasisFn::Log => Some("log"),
            BasisFn::Sin => Some("sin"),
            BasisFn::Cos => Some("cos"),
            BasisFn::Exp => Some("exp"),
            BasisFn::Square => Some("sq"),
            BasisFn::Sqrt => Some("sqrt"),
        }
    }

    fn from_prefix(s: &str) -> Option<Self> {
        Some(match s {
            "log" => BasisFn::Log,
            "sin" => BasisFn::Sin,
            "cos" => BasisFn::Cos,
            "exp" => BasisFn::Exp,
            "sq" => BasisFn::Square,
            "sqrt" => BasisFn::Sqrt,
            _ => return None,
        })
    }
}

/// A named basis function of the covariate vector, e.g. `x`, `log(x)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term {
    pub func: BasisFn,
    pub covariate: String,
}

impl Term {
    pub fn identity(covariate: &str) -> Self {
        Term {
            func: BasisFn::Identity,
            covariate: covariate.to_string(),
        }
    }

    pub fn new(func: BasisFn, covariate: &str) -> Self {
        Term {
            func,
            covariate: covariate.to_string(),
        }
    }

    pub fn apply(&self, v: f64) -> Result<f64> {
        Ok(match self.func {
            BasisFn::Identity => v,
            BasisFn::Log => {
                if v <= 0.0 {
                    return Err(Error::NonPositiveCovariate(v));
                }
                v.ln()
            }
            BasisFn::Sin => v.sin(),
            BasisFn::Cos => v.cos(),
            BasisFn::Exp => v.exp(),
            BasisFn::Square => v * v,
            BasisFn::Sqrt => {
                if v < 0.0 {
                    return Err(Error::InvalidArgument(format!("sqrt of negative {v}")));
                }
                v.sqrt()
            }
        })
    }
}

fn valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(open) = s.find('(') {
            let inner = s[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::UnknownBasisFunction(s.to_string()))?;
            let func = BasisFn::from_prefix(&s[..open])
                .ok_or_else(|| Error::UnknownBasisFunction(s.to_string()))?;
            if !valid_identifier(inner) {
                return Err(Error::UnknownBasisFunction(s.to_string()));
            }
            Ok(Term::new(func, inner))
        } else if valid_identifier(s) {
            Ok(Term::identity(s))
        } else {
            Err(Error::UnknownBasisFunction(s.to_string()))
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.func.prefix() {
            None => f.write_str(&self.covariate),
            Some(p) => write!(f, "{p}({})", self.covariate),
        }
    }
}

impl TryFrom<String> for Term {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> Self {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub site: String,
    pub covariates: Vec<f64>,
    pub treatment: f64,
    pub outcome: f64,
}

/// Individual-level rows sharing one covariate layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariate_names: Vec<String>,
    records: Vec<SubjectRecord>,
}

impl Dataset {
    pub fn new(covariate_names: Vec<String>, records: Vec<SubjectRecord>) -> Result<Self> {
        for name in &covariate_names {
            if !valid_identifier(name) {
                return Err(Error::config(
                    "covariates",
                    format!("invalid name `{name}`"),
                ));
            }
            if [SITE_COLUMN, TREATMENT_COLUMN, OUTCOME_COLUMN].contains(&name.as_str()) {
                return Err(Error::config(
                    "covariates",
                    format!("reserved name `{name}`"),
                ));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = covariate_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::config("covariates", format!("duplicate `{dup}`")));
        }
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "record {i} has {} covariates, expected {}",
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !(r.treatment.is_finite()
                && r.outcome.is_finite()
                && r.covariates.iter().all(|v| v.is_finite()))
            {
                return Err(Error::NonFinite(format!("record {i}")));
            }
        }
        Ok(Self {
            covariate_names,
            records,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownBasisFunction(format!("covariate `{name}` not in data")))
    }

    pub fn treatment(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.treatment).collect()
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    /// Evaluates `term` on every row.
    pub fn eval_term(&self, term: &Term) -> Result<Vec<f64>> {
        let j = self.covariate_index(&term.covariate)?;
        self.records
            .iter()
            .map(|r| term.apply(r.covariates[j]))
            .collect()
    }

    /// Site ids in sorted order.
    pub fn site_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.site.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Row indices grouped by site, sites in sorted order.
    pub fn site_indices(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.site.clone()).or_default().push(i);
        }
        map
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            covariate_names: self.covariate_names.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn split_by_site(&self) -> Vec<(String, Dataset)> {
        self.site_indices()
            .into_iter()
            .map(|(site, idx)| {
                let d = self.subset(&idx);
                (site, d)
            })
            .collect()
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut records = Vec::new();
        for p in parts {
            if p.covariate_names != first.covariate_names {
                return Err(Error::DimensionMismatch(
                    "datasets have different covariates".into(),
                ));
            }
            records.extend(p.records.iter().cloned());
        }
        Ok(Dataset {
            covariate_names: first.covariate_names.clone(),
            records,
        })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let t_col = find(TREATMENT_COLUMN)
            .ok_or_else(|| Error::config("csv", "missing treatment column `a`"))?;
        let y_col = find(OUTCOME_COLUMN)
            .ok_or_else(|| Error::config("csv", "missing outcome column `y`"))?;
        let s_col = find(SITE_COLUMN);
        let cov_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != t_col && *i != y_col && Some(*i) != s_col)
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let parse = |rec: &csv::StringRecord, i: usize, line: u64| -> Result<f64> {
            let field = rec.get(i).unwrap_or("");
            field.parse::<f64>().map_err(|_| {
                Error::config(
                    headers.get(i).unwrap_or("?"),
                    format!("line {line}: cannot parse `{field}` as a number"),
                )
            })
        };
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push(SubjectRecord {
                site: s_col.and_then(|i| rec.get(i)).unwrap_or("1").to_string(),
                covariates: cov_cols
                    .iter()
                    .map(|(i, _)| parse(&rec, *i, line))
                    .collect::<Result<_>>()?,
                treatment: parse(&rec, t_col, line)?,
                outcome: parse(&rec, y_col, line)?,
            });
        }
        Dataset::new(cov_cols.into_iter().map(|(_, h)| h).collect(), records)
    }

    /// Writes `# ` comment lines (provenance) followed by the CSV table.
    pub fn write_csv<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        for c in comments {
            for line in c.lines() {
                writeln!(writer, "# {line}")?;
            }
        }
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![SITE_COLUMN.to_string()];
        header.extend(self.covariate_names.iter().cloned());
        header.push(TREATMENT_COLUMN.into());
        header.push(OUTCOME_COLUMN.into());
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.site.clone()];
            row.extend(r.covariates.iter().map(|v| v.to_string()));
            row.push(r.treatment.to_string());
            row.push(r.outcome.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
