//! Individual time-varying covariate processes.
//!
//! Two families are supported: a continuous body mass measured with rounding,
//! an upper censoring limit and truncation at zero, whose latent mean follows a
//! random walk with drift across primary periods; and a categorical state
//! (e.g. disease) following a Markov chain, possibly unobserved on some
//! captures.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normal_ln_mass, normal_ln_pdf};

/// Default recording maximum of the mass scale, in grams.
pub const DEFAULT_MASS_MAX: f64 = 60.0;

/// One recorded mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassObservation {
    pub i: usize,
    pub j: usize,
    pub l: usize,
    pub z_obs: f64,
    pub censored_at_max: bool,
}

impl MassObservation {
    pub fn new(i: usize, j: usize, l: usize, z_obs: f64, mass_max: f64) -> Result<Self> {
        if !(z_obs >= 0.0 && z_obs <= mass_max) {
            return Err(Error::Validation(format!(
                "mass {z_obs} for individual {i} outside the recordable range [0, {mass_max}]"
            )));
        }
        Ok(MassObservation { i, j, l, z_obs, censored_at_max: z_obs == mass_max })
    }

    pub fn interval(&self, mass_max: f64) -> Result<(f64, f64)> {
        censoring_interval(true, Some(self.z_obs), mass_max)
    }
}

/// Parameters of the mass process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassProcessParams {
    pub mu_lambda: f64,
    pub sigma_lambda1: f64,
    /// Drift between consecutive primary periods (`k1 - 1` entries).
    pub delta: Vec<f64>,
    pub sigma_lambda2: f64,
    pub sigma_z: f64,
}

impl MassProcessParams {
    pub fn validate(&self, k1: usize) -> Result<()> {
        for (name, s) in [
            ("sigma_lambda1", self.sigma_lambda1),
            ("sigma_lambda2", self.sigma_lambda2),
            ("sigma_z", self.sigma_z),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {s}")));
            }
        }
        if self.delta.len() != k1 - 1 {
            return Err(Error::Dimension(format!("delta has {} entries, expected {}", self.delta.len(), k1 - 1)));
        }
        Ok(())
    }
}

/// Parameters of the categorical state process. States are coded `1..=S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseProcessParams {
    /// Probability of each state in the first period alive.
    pub nu: Vec<f64>,
    /// Row-stochastic transition matrix, `omega[h][l]` = P(h -> l).
    pub omega: Vec<Vec<f64>>,
}

impl DiseaseProcessParams {
    pub fn n_states(&self) -> usize {
        self.nu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.nu.len();
        if s < 2 {
            return Err(Error::InvalidParameter("need at least two states".into()));
        }
        let simplex = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x)) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !simplex(&self.nu) {
            return Err(Error::InvalidParameter("nu must be a probability vector".into()));
        }
        if self.omega.len() != s || self.omega.iter().any(|r| r.len() != s || !simplex(r)) {
            return Err(Error::InvalidParameter("omega must be a row-stochastic square matrix".into()));
        }
        Ok(())
    }
}

/// Location and scale used to standardize latent mass before it enters the
/// survival and capture links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub loc: f64,
    pub scale: f64,
}

impl Standardization {
    /// Mean and standard deviation of the recorded masses.
    pub fn from_observations(obs: &[MassObservation]) -> Result<Self> {
        if obs.len() < 2 {
            return Err(Error::Validation("need at least two recorded masses to standardize".into()));
        }
        let n = obs.len() as f64;
        let loc = obs.iter().map(|o| o.z_obs).sum::<f64>() / n;
        let var = obs.iter().map(|o| (o.z_obs - loc).powi(2)).sum::<f64>() / (n - 1.0);
        let scale = var.sqrt();
        if !(scale > 0.0) {
            return Err(Error::Validation("recorded masses have zero spread".into()));
        }
        Ok(Standardization { loc, scale })
    }

    #[inline]
    pub fn apply(&self, lambda: f64) -> f64 {
        standardize_mass(lambda, self.loc, self.scale)
    }

    /// Re-express coefficients `(intercept, slope)` fitted on this scale for
    /// use with `other`, leaving every linear predictor unchanged.
    pub fn transform_coefficients(&self, other: &Standardization, intercept: f64, slope: f64) -> (f64, f64) {
        let new_slope = slope * other.scale / self.scale;
        let new_intercept = intercept + slope * (other.loc - self.loc) / self.scale;
        (new_intercept, new_slope)
    }
}

/// Interval known to contain the true mass. Captured masses are rounded to
/// the nearest gram, so a record `z` means `(z - 0.5, z + 0.5)`; a record at
/// the scale maximum only says the mass is at least `max - 0.5`. Masses are
/// positive, so the lower bound never drops below zero.
pub fn censoring_interval(captured: bool, z_obs: Option<f64>, mass_max: f64) -> Result<(f64, f64)> {
    match (captured, z_obs) {
        (false, _) | (true, None) => Ok((0.0, f64::INFINITY)),
        (true, Some(z)) if z > mass_max => {
            Err(Error::Validation(format!("recorded mass {z} exceeds the scale maximum {mass_max}")))
        }
        (true, Some(z)) if z == mass_max => Ok((z - 0.5, f64::INFINITY)),
        (true, Some(z)) => Ok(((z - 0.5).max(0.0), z + 0.5)),
    }
}

/// Log density of one latent true mass `z` in its censoring interval
/// `(lo, hi)`: Normal(lambda, sigma_z) truncated to positive values, zero
/// outside the interval.
#[inline]
pub fn mass_obs_ln_density(z: f64, lambda: f64, sigma_z: f64, lo: f64, hi: f64) -> f64 {
    if !(z > lo && z < hi) {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf(z, lambda, sigma_z) - normal_ln_mass(lambda, sigma_z, 0.0, f64::INFINITY)
}

/// A recorded mass together with its censoring interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassRecord {
    pub i: usize,
    pub j: usize,
    pub l: usize,
    pub lo: f64,
    pub hi: f64,
    pub z_obs: f64,
}

/// Sum of latent-mass log densities over recorded occasions. Occasions
/// without a record are omitted: their interval is the whole support, so the
/// truncated factor integrates to one.
pub fn log_mass_obs(records: &[MassRecord], z_latent: &[f64], lambda: &Array2<f64>, sigma_z: f64) -> Result<f64> {
    if records.len() != z_latent.len() {
        return Err(Error::Dimension(format!(
            "{} mass records but {} latent masses",
            records.len(),
            z_latent.len()
        )));
    }
    let mut total = 0.0;
    for (r, &z) in records.iter().zip(z_latent) {
        total += mass_obs_ln_density(z, lambda[[r.i, r.j]], sigma_z, r.lo, r.hi);
    }
    Ok(total)
}

/// Random walk with drift for the latent mean mass: the first period alive
/// draws from Normal(mu, sigma_1), later periods step by `delta` with sd
/// sigma_2. Individuals with `first_alive = None` are skipped.
pub fn log_mass_walk(lambda: &Array2<f64>, params: &MassProcessParams, first_alive: &[Option<usize>]) -> Result<f64> {
    let (m, k1) = lambda.dim();
    if first_alive.len() != m {
        return Err(Error::Dimension(format!("{} first-alive entries for {m} rows", first_alive.len())));
    }
    params.validate(k1)?;
    let mut total = 0.0;
    for (i, b) in first_alive.iter().enumerate() {
        let Some(b) = *b else { continue };
        total += normal_ln_pdf(lambda[[i, b]], params.mu_lambda, params.sigma_lambda1);
        for j in b + 1..k1 {
            total += normal_ln_pdf(lambda[[i, j]], lambda[[i, j - 1]] + params.delta[j - 1], params.sigma_lambda2);
        }
    }
    Ok(total)
}

#[inline]
pub fn standardize_mass(lambda: f64, loc: f64, scale: f64) -> f64 {
    (lambda - loc) / scale
}

/// Categorical chain: `nu` at the first period alive, `omega` transitions
/// afterwards, summed over included individuals.
pub fn log_disease_process(
    z: &Array2<u8>,
    params: &DiseaseProcessParams,
    first_alive: &[Option<usize>],
    w: &[bool],
) -> Result<f64> {
    let (m, k1) = z.dim();
    if first_alive.len() != m || w.len() != m {
        return Err(Error::Dimension("state matrix, first-alive and w disagree in length".into()));
    }
    let s = params.n_states();
    let idx = |v: u8, i: usize, j: usize| -> Result<usize> {
        if v == 0 || v as usize > s {
            Err(Error::Validation(format!("invalid state code {v} at ({i}, {j})")))
        } else {
            Ok(v as usize - 1)
        }
    };
    let mut total = 0.0;
    for i in (0..m).filter(|&i| w[i]) {
        let Some(b) = first_alive[i] else { continue };
        let mut prev = idx(z[[i, b]], i, b)?;
        total += params.nu[prev].ln();
        for j in b + 1..k1 {
            let cur = idx(z[[i, j]], i, j)?;
            total += params.omega[prev][cur].ln();
            prev = cur;
        }
    }
    Ok(total)
}

/// Latent covariate values from which the link effect is computed.
#[derive(Debug, Clone, Copy)]
pub enum CovariateView<'a> {
    Mass { lambda: &'a Array2<f64>, standardization: Standardization },
    Disease { z: &'a Array2<u8> },
}

/// Per-(individual, period) effect entering the links: standardized mass, or
/// the indicator of the diseased state (code 2).
pub fn covariate_effect(view: CovariateView<'_>) -> Array2<f64> {
    match view {
        CovariateView::Mass { lambda, standardization } => lambda.mapv(|v| standardization.apply(v)),
        CovariateView::Disease { z } => z.mapv(|v| if v == 2 { 1.0 } else { 0.0 }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::LN_SQRT_2PI;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn interval_examples() {
        assert_eq!(censoring_interval(true, Some(45.0), 60.0).unwrap(), (44.5, 45.5));
        assert_eq!(censoring_interval(true, Some(60.0), 60.0).unwrap(), (59.5, f64::INFINITY));
        assert_eq!(censoring_interval(false, None, 60.0).unwrap(), (0.0, f64::INFINITY));
        assert!(matches!(censoring_interval(true, Some(61.0), 60.0), Err(Error::Validation(_))));
        assert_eq!(censoring_interval(true, Some(0.0), 60.0).unwrap(), (0.0, 0.5));
        assert!(MassObservation::new(0, 0, 0, 60.0, 60.0).unwrap().censored_at_max);
        assert!(MassObservation::new(0, 0, 0, 60.5, 60.0).is_err());
    }

    #[test]
    fn mass_obs_examples() {
        let lambda = array![[45.0]];
        let rec = MassRecord { i: 0, j: 0, l: 0, lo: 0.0, hi: f64::INFINITY, z_obs: 45.0 };
        let v = log_mass_obs(&[rec], &[45.0], &lambda, 1.0).unwrap();
        assert_relative_eq!(v, -0.918_938_533_204_672_7, epsilon = 1e-12);
        let rec = MassRecord { lo: 44.5, hi: 45.5, ..rec };
        assert_eq!(log_mass_obs(&[rec], &[44.0], &lambda, 1.0).unwrap(), f64::NEG_INFINITY);
        assert!(log_mass_obs(&[rec], &[], &lambda, 1.0).is_err());
    }

    #[test]
    fn walk_examples() {
        let params = MassProcessParams {
            mu_lambda: 30.0,
            sigma_lambda1: 2.0,
            delta: vec![2.0],
            sigma_lambda2: 1.0,
            sigma_z: 1.0,
        };
        let lambda = array![[30.0, 32.0]];
        let v = log_mass_walk(&lambda, &params, &[Some(0)]).unwrap();
        let init = normal_ln_pdf(30.0, 30.0, 2.0);
        assert_relative_eq!(v - init, -LN_SQRT_2PI, epsilon = 1e-12);
        // born at the second period: only the initial factor
        let v = log_mass_walk(&lambda, &params, &[Some(1)]).unwrap();
        assert_relative_eq!(v, normal_ln_pdf(32.0, 30.0, 2.0));
        assert_eq!(log_mass_walk(&lambda, &params, &[None]).unwrap(), 0.0);

        let flat = MassProcessParams { delta: vec![0.0, 0.0], ..params };
        let row = array![[30.0, 30.0, 30.0]];
        let v = log_mass_walk(&row, &flat, &[Some(0)]).unwrap();
        assert_relative_eq!(v, normal_ln_pdf(30.0, 30.0, 2.0) - 2.0 * LN_SQRT_2PI, epsilon = 1e-12);
    }

    #[test]
    fn standardization_examples() {
        assert_eq!(standardize_mass(40.0, 40.0, 10.0), 0.0);
        assert_eq!(standardize_mass(50.0, 40.0, 10.0), 1.0);
        assert_eq!(standardize_mass(55.0, 40.0, 10.0), 1.5);
    }

    #[test]
    fn standardization_change_preserves_predictors() {
        let a = Standardization { loc: 40.0, scale: 8.0 };
        let b = Standardization { loc: 35.5, scale: 11.25 };
        let (alpha0, alpha1) = (0.7, -0.45);
        let (alpha0_b, alpha1_b) = a.transform_coefficients(&b, alpha0, alpha1);
        for lambda in [12.0, 30.0, 44.4, 59.9] {
            let eta_a = alpha0 + alpha1 * a.apply(lambda);
            let eta_b = alpha0_b + alpha1_b * b.apply(lambda);
            assert_relative_eq!(eta_a, eta_b, epsilon = 1e-12);
        }
    }

    #[test]
    fn disease_examples() {
        let params = DiseaseProcessParams { nu: vec![0.9, 0.1], omega: vec![vec![0.95, 0.05], vec![0.3, 0.7]] };
        let z = array![[1u8, 1]];
        let v = log_disease_process(&z, &params, &[Some(0)], &[true]).unwrap();
        assert_relative_eq!(v, 0.9f64.ln() + 0.95f64.ln());
        assert_eq!(log_disease_process(&z, &params, &[Some(0)], &[false]).unwrap(), 0.0);

        let det = DiseaseProcessParams { nu: vec![1.0, 0.0], omega: vec![vec![1.0, 0.0], vec![0.0, 1.0]] };
        let z = array![[1u8, 1, 1]];
        assert_eq!(log_disease_process(&z, &det, &[Some(0)], &[true]).unwrap(), 0.0);
        let z = array![[1u8, 2, 2]];
        assert_eq!(log_disease_process(&z, &det, &[Some(0)], &[true]).unwrap(), f64::NEG_INFINITY);
        let z = array![[1u8, 3]];
        assert!(log_disease_process(&z, &params, &[Some(0)], &[true]).is_err());
    }

    #[test]
    fn effect_examples() {
        let z = array![[2u8, 1]];
        assert_eq!(covariate_effect(CovariateView::Disease { z: &z }), array![[1.0, 0.0]]);
        let lambda = array![[40.0, 50.0]];
        let st = Standardization { loc: 40.0, scale: 10.0 };
        assert_eq!(covariate_effect(CovariateView::Mass { lambda: &lambda, standardization: st }), array![[0.0, 1.0]]);
    }

    #[test]
    fn standardization_from_data() {
        let obs: Vec<MassObservation> =
            [30.0, 40.0, 50.0].iter().map(|&z| MassObservation::new(0, 0, 0, z, 60.0).unwrap()).collect();
        let st = Standardization::from_observations(&obs).unwrap();
        assert_eq!(st.loc, 40.0);
        assert_eq!(st.scale, 10.0);
    }
}
