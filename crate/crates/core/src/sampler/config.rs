use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Run-length, seeding and tuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_adapt: usize,
    pub n_iter: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub thin: usize,
    /// Initial random-walk scales by block name; unnamed blocks use defaults.
    pub proposal_scales: BTreeMap<String, f64>,
    pub target_accept: f64,
    /// Gain `c` of the log-scale update `c (accept - target) / t^0.6`.
    pub adapt_gain: f64,
    /// Log acceptance rates every this many iterations (0 disables).
    pub progress_every: usize,
    /// Hold latent states (inclusion, birth, death, covariates) at their
    /// initial values and update parameters only.
    pub freeze_latent: bool,
    /// Drop the capture and covariate-observation factors, leaving the prior.
    pub prior_only: bool,
    /// Check structural identities on every recorded draw.
    pub check_invariants: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_adapt: 1000,
            n_iter: 2000,
            n_chains: 3,
            seed: 1,
            thin: 1,
            proposal_scales: BTreeMap::new(),
            target_accept: 0.44,
            adapt_gain: 1.0,
            progress_every: 0,
            freeze_latent: false,
            prior_only: false,
            check_invariants: false,
        }
    }
}

/// Block names accepted in `proposal_scales`.
pub const SCALE_BLOCKS: &[&str] = &[
    "alpha0", "alpha1", "gamma0", "gamma1", "eta_s", "eta_p", "eps_p", "log_sigma", "rescale", "lambda",
];

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter < 1 {
            return Err(Error::Config("n_iter must be at least 1".into()));
        }
        if self.n_chains < 1 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must lie in (0, 1), got {}", self.target_accept)));
        }
        if !(self.adapt_gain >= 0.0 && self.adapt_gain.is_finite()) {
            return Err(Error::Config("adapt_gain must be non-negative".into()));
        }
        for (name, &v) in &self.proposal_scales {
            if !SCALE_BLOCKS.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown proposal block `{name}`; known: {}", SCALE_BLOCKS.join(", "))));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("proposal scale for `{name}` must be positive")));
            }
        }
        Ok(())
    }

    pub(crate) fn initial_scale(&self, block: &str) -> f64 {
        if let Some(&v) = self.proposal_scales.get(block) {
            return v;
        }
        match block {
            "alpha0" | "gamma0" => 0.2,
            "alpha1" | "gamma1" => 0.2,
            "eta_s" | "eta_p" | "eps_p" => 0.5,
            "log_sigma" => 0.3,
            "rescale" => 0.2,
            "lambda" => 1.0,
            _ => 0.5,
        }
    }

    /// Recorded draws per chain.
    pub fn n_kept(&self) -> usize {
        self.n_iter / self.thin
    }
}
