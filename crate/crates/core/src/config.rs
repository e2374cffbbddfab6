//! TOML configuration. Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cpd::{RegistrationConfig, Variant};
use crate::descriptor::ExtractionConfig;
use crate::error::{Error, Result};
use crate::kernels::KernelParams;
use crate::matching::HoughThresholds;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub extraction: ExtractionConfig,
    pub hough: HoughThresholds,
    pub kernel: KernelParams,
    pub registration: RegistrationSection,
}

/// The `[registration]` table. Kernel and Hough settings live in their own tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationSection {
    pub w: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub lambda_sq_floor: f64,
    pub variant: Variant,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        let d = RegistrationConfig::default();
        Self {
            w: d.w,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            lambda_sq_floor: d.lambda_sq_floor,
            variant: d.variant,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.registration_config().validate()
    }

    pub fn registration_config(&self) -> RegistrationConfig {
        let r = &self.registration;
        RegistrationConfig {
            w: r.w,
            max_iterations: r.max_iterations,
            tolerance: r.tolerance,
            lambda_sq_floor: r.lambda_sq_floor,
            variant: r.variant,
            kernel: self.kernel,
            hough: self.hough,
        }
    }
}
