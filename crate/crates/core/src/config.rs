//! Analysis configuration files: the outcome design and the treatment model
//! shared by every site.

use crate::error::{Error, Result};
use crate::gdwols::DesignSpec;
use crate::weights::TreatmentModelSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub design: DesignSpec,
    pub treatment: TreatmentModelSpec,
    /// Upper bound on density weights (continuous treatment only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ipw_cap: Option<f64>,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::config("analysis config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::config("analysis config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        self.treatment.validate()?;
        if let Some(c) = self.ipw_cap {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(
                    "ipw_cap",
                    format!("must be positive, got {c}"),
                ));
            }
        }
        Ok(())
    }
}
