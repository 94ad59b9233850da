//! Model specification, the full parameter vector and prior settings.

use serde::{Deserialize, Serialize};

use crate::covariates::{DiseaseProcessParams, MassProcessParams, Standardization};
use crate::data::{CaptureData, CovariateKind};
use crate::error::{Error, Result};
use crate::likelihood::LinkParams;
use crate::popstate::BirthParams;

/// Structural choices that determine which parameters exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Robust design: per-secondary capture effects nested in primaries.
    pub robust: bool,
    pub covariate: CovariateKind,
    /// Augmentation bound.
    pub m: usize,
    #[serde(default = "default_states")]
    pub n_states: u8,
    /// Treat recorded masses as interval censored; `false` uses the raw values.
    #[serde(default = "default_true")]
    pub mass_censoring: bool,
    /// Fixed standardization of latent mass; derived from the data when absent.
    #[serde(default)]
    pub standardization: Option<Standardization>,
}

fn default_states() -> u8 {
    2
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn validate(&self, data: &CaptureData) -> Result<()> {
        if self.m < data.n_observed() {
            return Err(Error::Validation(format!(
                "M = {} is smaller than the {} observed individuals",
                self.m,
                data.n_observed()
            )));
        }
        if self.m == 0 {
            return Err(Error::Validation("M must be positive".into()));
        }
        if !self.robust && data.k2.iter().any(|&n| n != 1) {
            return Err(Error::Validation("standard model needs one secondary sample per primary".into()));
        }
        if self.covariate != data.covariate && data.n_observed() > 0 {
            return Err(Error::Validation(format!(
                "model covariate {:?} does not match data covariate {:?}",
                self.covariate, data.covariate
            )));
        }
        if self.covariate == CovariateKind::Categorical && self.n_states < 2 {
            return Err(Error::Validation("categorical covariate needs at least two states".into()));
        }
        if let Some(s) = self.standardization {
            if !(s.scale > 0.0 && s.loc.is_finite() && s.scale.is_finite()) {
                return Err(Error::Validation("standardization scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Every sampled parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub birth: BirthParams,
    pub link: LinkParams,
    #[serde(default)]
    pub mass: Option<MassProcessParams>,
    #[serde(default)]
    pub disease: Option<DiseaseProcessParams>,
}

impl ModelParams {
    pub fn validate(&self, k2: &[usize], covariate: CovariateKind) -> Result<()> {
        let k1 = k2.len();
        self.birth.validate()?;
        if self.birth.zeta.len() != k1 {
            return Err(Error::Dimension(format!("zeta has {} entries for {k1} periods", self.birth.zeta.len())));
        }
        self.link.validate(k2)?;
        match covariate {
            CovariateKind::Mass => self
                .mass
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("mass process parameters missing".into()))?
                .validate(k1)?,
            CovariateKind::Categorical => self
                .disease
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("disease process parameters missing".into()))?
                .validate()?,
            CovariateKind::None => {}
        }
        Ok(())
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Normal sd for intercepts, slopes, `mu_lambda` and the drifts.
    pub coef_sd: f64,
    /// Upper bound of the uniform prior on every standard deviation.
    pub sd_upper: f64,
    pub zeta_a: f64,
    pub zeta_b: f64,
    pub psi_a: f64,
    pub psi_b: f64,
    /// Symmetric Dirichlet concentration for `nu` and each `omega` row.
    pub dirichlet: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { coef_sd: 10.0, sd_upper: 10.0, zeta_a: 1.0, zeta_b: 1.0, psi_a: 1.0, psi_b: 1.0, dirichlet: 1.0 }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("coef_sd", self.coef_sd),
            ("sd_upper", self.sd_upper),
            ("zeta_a", self.zeta_a),
            ("zeta_b", self.zeta_b),
            ("psi_a", self.psi_a),
            ("psi_b", self.psi_b),
            ("dirichlet", self.dirichlet),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior hyperparameter {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}
