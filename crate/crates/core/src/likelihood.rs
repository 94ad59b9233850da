//! Log-density evaluators for the birth, mortality and capture factors of the
//! complete-data likelihood.
//!
//! All evaluators work on full indicator matrices and return
//! `f64::NEG_INFINITY` for configurations the model cannot produce (born
//! twice, resurrected, captured while not alive). Structural problems such as
//! mismatched dimensions are reported as errors instead.
//!
//! Pseudo-individuals with `w_i = 0` contribute nothing to any factor.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{expit, ln_bern};

/// Logit-scale coefficients and temporal random effects for survival and capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Survival random effects, one per interval (`k1 - 1`).
    pub eta_s: Vec<f64>,
    /// Capture random effects, one per primary period (`k1`).
    pub eta_p: Vec<f64>,
    /// Per-secondary capture effects, `eps_p[j][l]`; empty for standard designs.
    pub eps_p: Vec<Vec<f64>>,
    pub sigma_s: f64,
    pub sigma_p1: f64,
    pub sigma_p2: f64,
}

impl LinkParams {
    /// Intercept-only parameters with all random effects at zero.
    pub fn zeros(k2: &[usize], nested: bool) -> Self {
        let k1 = k2.len();
        LinkParams {
            alpha0: 0.0,
            alpha1: 0.0,
            gamma0: 0.0,
            gamma1: 0.0,
            eta_s: vec![0.0; k1 - 1],
            eta_p: vec![0.0; k1],
            eps_p: if nested { k2.iter().map(|&n| vec![0.0; n]).collect() } else { Vec::new() },
            sigma_s: 1.0,
            sigma_p1: 1.0,
            sigma_p2: 1.0,
        }
    }

    pub fn has_eps(&self) -> bool {
        !self.eps_p.is_empty()
    }

    /// Linear predictor for survival over interval `j -> j+1` given the
    /// covariate effect at the start of the interval.
    #[inline]
    pub fn survival_logit(&self, j: usize, effect: f64) -> f64 {
        self.alpha0 + self.alpha1 * effect + self.eta_s[j]
    }

    #[inline]
    pub fn capture_logit(&self, j: usize, l: usize, effect: f64) -> f64 {
        let eps = if self.eps_p.is_empty() { 0.0 } else { self.eps_p[j][l] };
        self.gamma0 + self.gamma1 * effect + self.eta_p[j] + eps
    }

    pub fn validate(&self, k2: &[usize]) -> Result<()> {
        let k1 = k2.len();
        for (name, s) in [("sigma_s", self.sigma_s), ("sigma_p1", self.sigma_p1), ("sigma_p2", self.sigma_p2)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {s}")));
            }
        }
        if self.eta_s.len() != k1 - 1 || self.eta_p.len() != k1 {
            return Err(Error::Dimension(format!(
                "random effects have lengths ({}, {}), expected ({}, {k1})",
                self.eta_s.len(),
                self.eta_p.len(),
                k1 - 1
            )));
        }
        if self.has_eps()
            && (self.eps_p.len() != k1 || self.eps_p.iter().zip(k2).any(|(e, &n)| e.len() != n)) {
                return Err(Error::Dimension("eps_p does not match the secondary sample counts".into()));
            }
        Ok(())
    }
}

/// Survival probabilities `S[i, j]` (`M x (k1-1)`) and capture probabilities
/// `p[i, j, l]` (`M x k1 x max k2`, padded with NaN past `k2[j]`).
#[derive(Debug, Clone)]
pub struct LinkProbabilities {
    pub survival: Array2<f64>,
    pub capture: Array3<f64>,
}

/// Evaluate survival and capture probabilities for every pseudo-individual
/// given the per-(individual, period) covariate effect.
pub fn link_probabilities(link: &LinkParams, effect: &Array2<f64>, k2: &[usize]) -> Result<LinkProbabilities> {
    let k1 = k2.len();
    link.validate(k2)?;
    if effect.ncols() != k1 {
        return Err(Error::Dimension(format!("effect has {} columns for {k1} periods", effect.ncols())));
    }
    let m = effect.nrows();
    let max_k2 = k2.iter().copied().max().unwrap_or(1);
    let mut survival = Array2::zeros((m, k1 - 1));
    let mut capture = Array3::from_elem((m, k1, max_k2), f64::NAN);
    for i in 0..m {
        for j in 0..k1 {
            let x = effect[[i, j]];
            if j + 1 < k1 {
                let eta = link.survival_logit(j, x);
                if !eta.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite survival predictor at ({i}, {j})")));
                }
                survival[[i, j]] = expit(eta);
            }
            for l in 0..k2[j] {
                let eta = link.capture_logit(j, l, x);
                if !eta.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite capture predictor at ({i}, {j}, {l})")));
                }
                capture[[i, j, l]] = expit(eta);
            }
        }
    }
    Ok(LinkProbabilities { survival, capture })
}

fn check_rows(name: &str, rows: usize, cols: usize, m: usize, k1: usize) -> Result<()> {
    if rows != m || cols != k1 {
        return Err(Error::Dimension(format!("{name} is {rows}x{cols}, expected {m}x{k1}")));
    }
    Ok(())
}

/// Birth factor: `Bern(zeta_1)` for the first period, then `Bern(zeta_j)`
/// while still unborn and a certain 1 once born.
pub fn log_birth(a_b: &Array2<u8>, w: &[bool], zeta: &[f64]) -> Result<f64> {
    let (m, k1) = a_b.dim();
    if w.len() != m || zeta.len() != k1 {
        return Err(Error::Dimension(format!(
            "log_birth: a_b is {m}x{k1}, w has {}, zeta has {}",
            w.len(),
            zeta.len()
        )));
    }
    if zeta[k1 - 1] != 1.0 {
        return Err(Error::InvalidParameter("the last zeta must equal 1".into()));
    }
    let mut total = 0.0;
    for i in (0..m).filter(|&i| w[i]) {
        let mut born = false;
        for j in 0..k1 {
            let now = a_b[[i, j]] == 1;
            if born {
                if !now {
                    return Ok(f64::NEG_INFINITY);
                }
                continue;
            }
            total += ln_bern(now, zeta[j]);
            born = now;
        }
    }
    Ok(total)
}

/// Mortality factor: for `j >= 2`,
/// `Bern(a_d[j-1] (a_b[j-1] S[j-1] + 1 - a_b[j-1]))`.
///
/// `survival` is `M x (k1-1)`; column `j` is survival from period `j` to `j+1`.
/// The encoding fixes `a_d[i, 1] = 1`; rows violating it are impossible.
pub fn log_mortality(a_d: &Array2<u8>, a_b: &Array2<u8>, w: &[bool], survival: &Array2<f64>) -> Result<f64> {
    let (m, k1) = a_d.dim();
    check_rows("a_b", a_b.nrows(), a_b.ncols(), m, k1)?;
    check_rows("S", survival.nrows(), survival.ncols() + 1, m, k1)?;
    if w.len() != m {
        return Err(Error::Dimension(format!("w has {} entries for {m} individuals", w.len())));
    }
    let mut total = 0.0;
    for i in (0..m).filter(|&i| w[i]) {
        if a_d[[i, 0]] != 1 {
            return Ok(f64::NEG_INFINITY);
        }
        for j in 1..k1 {
            let prev_alive = a_d[[i, j - 1]] == 1;
            let now = a_d[[i, j]] == 1;
            let param = if !prev_alive {
                0.0
            } else if a_b[[i, j - 1]] == 1 {
                survival[[i, j - 1]]
            } else {
                1.0
            };
            let v = ln_bern(now, param);
            if v == f64::NEG_INFINITY {
                return Ok(v);
            }
            total += v;
        }
    }
    Ok(total)
}

/// Capture factor for a standard design: `Bern(X[i, j] | a_d a_b p)`.
///
/// An excluded individual with any capture makes the configuration impossible.
pub fn log_capture(
    x: &Array2<u8>,
    a_b: &Array2<u8>,
    a_d: &Array2<u8>,
    w: &[bool],
    p: &Array2<f64>,
) -> Result<f64> {
    let (m, k1) = x.dim();
    check_rows("a_b", a_b.nrows(), a_b.ncols(), m, k1)?;
    check_rows("a_d", a_d.nrows(), a_d.ncols(), m, k1)?;
    check_rows("p", p.nrows(), p.ncols(), m, k1)?;
    if w.len() != m {
        return Err(Error::Dimension(format!("w has {} entries for {m} individuals", w.len())));
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..k1 {
            let caught = x[[i, j]] == 1;
            let alive = w[i] && a_b[[i, j]] == 1 && a_d[[i, j]] == 1;
            if !alive {
                if caught {
                    return Ok(f64::NEG_INFINITY);
                }
                continue;
            }
            total += ln_bern(caught, p[[i, j]]);
        }
    }
    Ok(total)
}

/// Capture factor for a robust design: captures `X[i, j, l]` over the
/// `k2[j]` secondary samples of each primary period; alive status is constant
/// within a primary period.
pub fn log_capture_robust(
    x: &Array3<u8>,
    k2: &[usize],
    a_b: &Array2<u8>,
    a_d: &Array2<u8>,
    w: &[bool],
    p: &Array3<f64>,
) -> Result<f64> {
    let (m, k1, width) = x.dim();
    check_rows("a_b", a_b.nrows(), a_b.ncols(), m, k1)?;
    check_rows("a_d", a_d.nrows(), a_d.ncols(), m, k1)?;
    if p.dim() != x.dim() || k2.len() != k1 || k2.iter().any(|&n| n > width) {
        return Err(Error::Dimension("robust capture arrays do not conform to the design".into()));
    }
    if w.len() != m {
        return Err(Error::Dimension(format!("w has {} entries for {m} individuals", w.len())));
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..k1 {
            let alive = w[i] && a_b[[i, j]] == 1 && a_d[[i, j]] == 1;
            for l in 0..k2[j] {
                let caught = x[[i, j, l]] == 1;
                if !alive {
                    if caught {
                        return Ok(f64::NEG_INFINITY);
                    }
                    continue;
                }
                total += ln_bern(caught, p[[i, j, l]]);
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array3};

    fn one(v: &[u8]) -> Array2<u8> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn birth_examples() {
        let w = [true];
        assert_relative_eq!(log_birth(&one(&[1, 1]), &w, &[0.3, 1.0]).unwrap(), 0.3f64.ln());
        assert_relative_eq!(log_birth(&one(&[0, 1]), &w, &[0.3, 1.0]).unwrap(), 0.7f64.ln());
        assert_relative_eq!(
            log_birth(&one(&[0, 0, 1]), &w, &[0.3, 0.5, 1.0]).unwrap(),
            (0.7f64 * 0.5).ln(),
            epsilon = 1e-15
        );
        assert_eq!(log_birth(&one(&[1, 0]), &w, &[0.3, 1.0]).unwrap(), f64::NEG_INFINITY);
        // last zeta is 1, so never being born is impossible
        assert_eq!(log_birth(&one(&[0, 0]), &w, &[0.3, 1.0]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_birth(&one(&[0, 1]), &[false], &[0.3, 1.0]).unwrap(), 0.0);
        assert!(log_birth(&one(&[0, 1]), &w, &[0.3, 0.9]).is_err());
        assert!(log_birth(&one(&[0, 1]), &[true, true], &[0.3, 1.0]).is_err());
    }

    #[test]
    fn mortality_examples() {
        let w = [true];
        let s = array![[0.8]];
        assert_relative_eq!(log_mortality(&one(&[1, 0]), &one(&[1, 1]), &w, &s).unwrap(), 0.2f64.ln(), epsilon = 1e-15);
        assert_eq!(log_mortality(&one(&[1, 1]), &one(&[0, 1]), &w, &s).unwrap(), 0.0);
        let s = array![[0.9, 0.9]];
        assert_relative_eq!(
            log_mortality(&one(&[1, 1, 1]), &one(&[1, 1, 1]), &w, &s).unwrap(),
            2.0 * 0.9f64.ln()
        );
        // resurrection and death before birth are impossible
        assert_eq!(log_mortality(&one(&[1, 0, 1]), &one(&[1, 1, 1]), &w, &s).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_mortality(&one(&[1, 0, 0]), &one(&[0, 1, 1]), &w, &s).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_mortality(&one(&[0, 0, 0]), &one(&[1, 1, 1]), &w, &s).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn capture_examples() {
        let p = array![[0.4]];
        let alive = one(&[1]);
        assert_relative_eq!(log_capture(&one(&[1]), &alive, &alive, &[true], &p).unwrap(), 0.4f64.ln());
        let unborn = one(&[0]);
        assert_eq!(log_capture(&one(&[0]), &unborn, &alive, &[true], &p).unwrap(), 0.0);
        assert_eq!(log_capture(&one(&[1]), &unborn, &alive, &[true], &p).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_capture(&one(&[1]), &alive, &alive, &[false], &p).unwrap(), f64::NEG_INFINITY);
        assert!(log_capture(&one(&[1]), &alive, &alive, &[true], &array![[0.4, 0.2]]).is_err());
    }

    #[test]
    fn robust_capture_examples() {
        let alive = one(&[1]);
        let x = Array3::from_shape_vec((1, 1, 2), vec![1u8, 0]).unwrap();
        let p = Array3::from_elem((1, 1, 2), 0.5);
        assert_relative_eq!(log_capture_robust(&x, &[2], &alive, &alive, &[true], &p).unwrap(), 2.0 * 0.5f64.ln());
        let zeros = Array3::zeros((1, 1, 2));
        let dead = one(&[0]);
        assert_eq!(log_capture_robust(&zeros, &[2], &alive, &dead, &[true], &p).unwrap(), 0.0);
        assert_eq!(log_capture_robust(&zeros, &[2], &alive, &alive, &[false], &p).unwrap(), 0.0);
        assert_eq!(log_capture_robust(&x, &[2], &alive, &dead, &[true], &p).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn robust_matches_standard_with_single_secondaries() {
        let a_b = array![[1u8, 1, 1], [0, 1, 1], [0, 0, 1]];
        let a_d = array![[1u8, 1, 0], [1, 1, 1], [1, 1, 1]];
        let x = array![[1u8, 0, 0], [0, 1, 1], [0, 0, 0]];
        let p = array![[0.3, 0.6, 0.2], [0.5, 0.5, 0.7], [0.1, 0.9, 0.4]];
        let w = [true, true, true];
        let std = log_capture(&x, &a_b, &a_d, &w, &p).unwrap();
        let x3 = x.clone().into_shape_with_order((3, 3, 1)).unwrap();
        let p3 = p.clone().into_shape_with_order((3, 3, 1)).unwrap();
        let rob = log_capture_robust(&x3, &[1, 1, 1], &a_b, &a_d, &w, &p3).unwrap();
        assert_eq!(std, rob);
    }

    #[test]
    fn link_examples() {
        let k2 = [1, 1, 1];
        let mut link = LinkParams::zeros(&k2, false);
        let effect = Array2::from_elem((2, 3), 3.7);
        let probs = link_probabilities(&link, &effect, &k2).unwrap();
        assert!(probs.survival.iter().all(|&s| s == 0.5));

        link.alpha0 = 1.0;
        link.alpha1 = 1.0;
        let probs = link_probabilities(&link, &Array2::ones((1, 3)), &k2).unwrap();
        assert_relative_eq!(probs.survival[[0, 0]], 0.880_797_077_977_882_3, epsilon = 1e-15);

        link.gamma0 = -1.0;
        link.eta_p[1] = 1.0;
        let probs = link_probabilities(&link, &Array2::zeros((1, 3)), &k2).unwrap();
        assert_eq!(probs.capture[[0, 1, 0]], 0.5);

        link.alpha0 = f64::NAN;
        assert!(link_probabilities(&link, &Array2::zeros((1, 3)), &k2).is_err());
    }

    #[test]
    fn link_eps_applies_per_secondary() {
        let k2 = [2, 1];
        let mut link = LinkParams::zeros(&k2, true);
        link.eps_p[0][1] = 2.0;
        let probs = link_probabilities(&link, &Array2::zeros((1, 2)), &k2).unwrap();
        assert_eq!(probs.capture[[0, 0, 0]], 0.5);
        assert_relative_eq!(probs.capture[[0, 0, 1]], expit(2.0));
        assert!(probs.capture[[0, 1, 1]].is_nan());
    }

    /// Enumerate every binary (a_b, a_d, X) for one individual over two
    /// periods; the exponentiated factors must sum to one.
    #[test]
    fn factorization_normalizes_single_individual() {
        let zeta = [0.35, 1.0];
        let s = array![[0.7]];
        let p = array![[0.25, 0.6]];
        let mut total = 0.0;
        for code in 0u32..64 {
            let bit = |k: u32| ((code >> k) & 1) as u8;
            let a_b = one(&[bit(0), bit(1)]);
            let a_d = one(&[bit(2), bit(3)]);
            let x = one(&[bit(4), bit(5)]);
            let lp = log_birth(&a_b, &[true], &zeta).unwrap()
                + log_mortality(&a_d, &a_b, &[true], &s).unwrap()
                + log_capture(&x, &a_b, &a_d, &[true], &p).unwrap();
            total += lp.exp();
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }
}
