//! Augmented population state and the demographic quantities derived from it.
//!
//! The unknown population of size `N` is embedded in a list of `M`
//! pseudo-individuals. Each carries an inclusion flag `w` (real or not) and
//! two binary rows over primary periods: `a_b[i, j] = 1` once born (at or
//! before `j`) and `a_d[i, j] = 1` while not yet dead.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a capture-recapture study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDesign {
    /// Number of primary periods.
    pub k1: usize,
    /// Secondary samples within each primary period (all 1 for a standard design).
    pub k2: Vec<usize>,
    /// Augmentation upper bound on the population size.
    pub m: usize,
    /// Number of distinct individuals ever captured.
    pub n_observed: usize,
}

impl StudyDesign {
    pub fn new(k1: usize, k2: Vec<usize>, m: usize, n_observed: usize) -> Result<Self> {
        let d = StudyDesign { k1, k2, m, n_observed };
        d.validate()?;
        Ok(d)
    }

    /// Standard (non-nested) design with one sample per period.
    pub fn standard(k1: usize, m: usize, n_observed: usize) -> Result<Self> {
        Self::new(k1, vec![1; k1], m, n_observed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 < 2 {
            return Err(Error::InvalidParameter(format!("k1 must be >= 2, got {}", self.k1)));
        }
        if self.k2.len() != self.k1 {
            return Err(Error::Dimension(format!(
                "k2 has {} entries for {} primary periods",
                self.k2.len(),
                self.k1
            )));
        }
        if let Some(j) = self.k2.iter().position(|&n| n == 0) {
            return Err(Error::InvalidParameter(format!("primary period {} has no secondary samples", j + 1)));
        }
        if self.m < self.n_observed {
            return Err(Error::InvalidParameter(format!(
                "augmentation bound M = {} is below the {} observed individuals",
                self.m, self.n_observed
            )));
        }
        Ok(())
    }

    pub fn max_k2(&self) -> usize {
        self.k2.iter().copied().max().unwrap_or(1)
    }

    /// Total number of (primary, secondary) sampling occasions.
    pub fn n_occasions(&self) -> usize {
        self.k2.iter().sum()
    }

    /// Offset of the first secondary sample of each primary period in a flat
    /// occasion index; length `k1 + 1`.
    pub fn occasion_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k1 + 1);
        let mut acc = 0;
        out.push(0);
        for &n in &self.k2 {
            acc += n;
            out.push(acc);
        }
        out
    }

    pub fn is_nested(&self) -> bool {
        self.k2.iter().any(|&n| n > 1)
    }
}

/// Latent birth/death indicators and inclusion flags for all `M` pseudo-individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub a_b: Array2<u8>,
    pub a_d: Array2<u8>,
    pub w: Vec<bool>,
}

impl AugmentedState {
    pub fn new(a_b: Array2<u8>, a_d: Array2<u8>, w: Vec<bool>) -> Result<Self> {
        let s = AugmentedState { a_b, a_d, w };
        s.check_dims()?;
        Ok(s)
    }

    /// Build the indicator matrices from per-individual alive windows:
    /// individual `i` is alive on primary periods `birth[i] ..= last_alive[i]`
    /// (zero-based).
    pub fn from_intervals(k1: usize, birth: &[usize], last_alive: &[usize], w: &[bool]) -> Result<Self> {
        if birth.len() != last_alive.len() || birth.len() != w.len() {
            return Err(Error::Dimension("birth, last_alive and w lengths differ".into()));
        }
        let m = birth.len();
        let mut a_b = Array2::zeros((m, k1));
        let mut a_d = Array2::zeros((m, k1));
        for i in 0..m {
            let (b, d) = (birth[i], last_alive[i]);
            if b > d || d >= k1 {
                return Err(Error::Invariant(format!(
                    "individual {i}: alive window {b}..={d} invalid for {k1} periods"
                )));
            }
            for j in 0..k1 {
                a_b[[i, j]] = u8::from(j >= b);
                a_d[[i, j]] = u8::from(j <= d);
            }
        }
        Ok(AugmentedState { a_b, a_d, w: w.to_vec() })
    }

    pub fn m(&self) -> usize {
        self.w.len()
    }

    pub fn k1(&self) -> usize {
        self.a_b.ncols()
    }

    pub fn check_dims(&self) -> Result<()> {
        let m = self.w.len();
        if self.a_b.nrows() != m || self.a_d.nrows() != m {
            return Err(Error::Dimension(format!(
                "w has {m} entries but a_b has {} rows and a_d has {}",
                self.a_b.nrows(),
                self.a_d.nrows()
            )));
        }
        if self.a_b.ncols() != self.a_d.ncols() {
            return Err(Error::Dimension("a_b and a_d have different period counts".into()));
        }
        Ok(())
    }

    /// First period with `a_b = 1` for each individual (the derived `b`).
    pub fn first_alive(&self) -> Vec<Option<usize>> {
        self.a_b.rows().into_iter().map(|row| row.iter().position(|&v| v == 1)).collect()
    }

    /// Check the born-once / live-once encoding for every row.
    pub fn check_structure(&self) -> Result<()> {
        self.check_dims()?;
        for (i, (rb, rd)) in self.a_b.rows().into_iter().zip(self.a_d.rows()).enumerate() {
            if rd[0] != 1 {
                return Err(Error::Invariant(format!("individual {i}: a_d starts at 0")));
            }
            for j in 1..rb.len() {
                if rb[j] < rb[j - 1] {
                    return Err(Error::Invariant(format!("individual {i}: born twice (a_b 1->0 at {j})")));
                }
                if rd[j] > rd[j - 1] {
                    return Err(Error::Invariant(format!("individual {i}: a_d 0->1 at {j}")));
                }
                if rd[j] < rd[j - 1] && rb[j - 1] == 0 {
                    return Err(Error::Invariant(format!("individual {i}: died before birth at {j}")));
                }
            }
        }
        Ok(())
    }

    /// Check the observed individuals (the first `n_observed` rows) against
    /// their capture periods: included, and alive on every captured period.
    pub fn check_observed(&self, captured_periods: &[Vec<usize>]) -> Result<()> {
        for (i, periods) in captured_periods.iter().enumerate() {
            if !self.w[i] {
                return Err(Error::Invariant(format!("observed individual {i} excluded")));
            }
            for &j in periods {
                if self.a_b[[i, j]] * self.a_d[[i, j]] != 1 {
                    return Err(Error::Invariant(format!(
                        "observed individual {i} captured at period {j} while not alive"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Birth-process parameters: conditional entry probabilities and the
/// inclusion probability of the augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthParams {
    /// `zeta[j]`: probability of entering at period `j` given not yet entered;
    /// the last entry is fixed at 1.
    pub zeta: Vec<f64>,
    pub psi: f64,
}

impl BirthParams {
    pub fn validate(&self) -> Result<()> {
        if self.zeta.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::InvalidParameter("zeta entries must lie in [0, 1]".into()));
        }
        if self.zeta.last() != Some(&1.0) {
            return Err(Error::InvalidParameter("the last zeta must equal 1".into()));
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::InvalidParameter("psi must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-draw demographic summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicSummary {
    pub n_total: usize,
    pub n_by_period: Vec<usize>,
    pub lifetime: Vec<usize>,
    pub beta: Vec<f64>,
    /// Per-capita birth rates for periods `1..k1`; `None` when `N_j = 0`.
    pub birth_rate: Vec<Option<f64>>,
}

impl DemographicSummary {
    pub fn compute(state: &AugmentedState, zeta: &[f64]) -> Result<Self> {
        let n_by_period = derive_abundance(state)?;
        let lifetime = derive_lifetime(state)?;
        let n_total = state.w.iter().filter(|&&w| w).count();
        let beta = zeta_to_beta(zeta)?;
        let birth_rate = beta_to_eta(&beta, n_total, &n_by_period);
        Ok(DemographicSummary { n_total, n_by_period, lifetime, beta, birth_rate })
    }

    /// Mean lifetime over included individuals.
    pub fn mean_lifetime(&self, w: &[bool]) -> f64 {
        let (sum, n) = self
            .lifetime
            .iter()
            .zip(w)
            .filter(|(_, &wi)| wi)
            .fold((0usize, 0usize), |(s, n), (&l, _)| (s + l, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum as f64 / n as f64
        }
    }
}

/// Abundance per primary period: `N_j = sum_i w_i a_b[i, j] a_d[i, j]`.
pub fn derive_abundance(state: &AugmentedState) -> Result<Vec<usize>> {
    state.check_dims()?;
    let mut n = vec![0usize; state.k1()];
    for (i, &w) in state.w.iter().enumerate() {
        if !w {
            continue;
        }
        for (j, nj) in n.iter_mut().enumerate() {
            *nj += usize::from(state.a_b[[i, j]] * state.a_d[[i, j]]);
        }
    }
    Ok(n)
}

/// Periods alive per individual: `Delta_i = sum_j a_b[i, j] a_d[i, j]`,
/// reported for every pseudo-individual regardless of `w`.
pub fn derive_lifetime(state: &AugmentedState) -> Result<Vec<usize>> {
    state.check_dims()?;
    Ok((&state.a_b * &state.a_d)
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| usize::from(v)).sum())
        .collect())
}

/// Unconditional entry probabilities from the conditional ones:
/// `beta_0 = zeta_1`, `beta_j = zeta_{j+1} (1 - sum_{h<j} beta_h)`.
pub fn zeta_to_beta(zeta: &[f64]) -> Result<Vec<f64>> {
    if zeta.last() != Some(&1.0) {
        return Err(Error::InvalidParameter("the last zeta must equal 1".into()));
    }
    let mut beta = Vec::with_capacity(zeta.len());
    let mut remaining = 1.0;
    for &z in zeta {
        let b = z * remaining;
        beta.push(b);
        remaining -= b;
    }
    Ok(beta)
}

/// Per-capita birth rates `eta_j = beta_j N / N_j` for `j = 1 .. k1-1`,
/// where `N_j` is the abundance at (one-based) period `j`.
pub fn beta_to_eta(beta: &[f64], n_total: usize, n_by_period: &[usize]) -> Vec<Option<f64>> {
    (1..beta.len())
        .map(|j| {
            let nj = n_by_period[j - 1];
            if beta[j] == 0.0 {
                Some(0.0)
            } else if nj == 0 {
                None
            } else {
                Some(beta[j] * n_total as f64 / nj as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn design_validation() {
        assert!(StudyDesign::standard(1, 10, 0).is_err());
        assert!(StudyDesign::new(3, vec![1, 0, 2], 10, 0).is_err());
        assert!(StudyDesign::standard(3, 4, 5).is_err());
        let d = StudyDesign::new(3, vec![2, 1, 3], 10, 4).unwrap();
        assert_eq!(d.occasion_offsets(), vec![0, 2, 3, 6]);
        assert_eq!(d.n_occasions(), 6);
        assert!(d.is_nested());
    }

    #[test]
    fn abundance_examples() {
        let s = AugmentedState::new(Array2::ones((2, 3)), Array2::ones((2, 3)), vec![true, true]).unwrap();
        assert_eq!(derive_abundance(&s).unwrap(), vec![2, 2, 2]);

        let a_b = array![[1u8, 1], [0, 1]];
        let a_d = array![[1u8, 0], [1, 1]];
        let s = AugmentedState::new(a_b.clone(), a_d.clone(), vec![true, true]).unwrap();
        assert_eq!(derive_abundance(&s).unwrap(), vec![1, 1]);
        let s = AugmentedState::new(a_b, a_d, vec![true, false]).unwrap();
        assert_eq!(derive_abundance(&s).unwrap(), vec![1, 0]);
    }

    #[test]
    fn abundance_dimension_mismatch() {
        let s = AugmentedState { a_b: Array2::ones((2, 3)), a_d: Array2::ones((2, 3)), w: vec![true] };
        assert!(matches!(derive_abundance(&s), Err(Error::Dimension(_))));
        assert!(AugmentedState::new(Array2::ones((2, 3)), Array2::ones((2, 2)), vec![true; 2]).is_err());
    }

    #[test]
    fn lifetime_examples() {
        let s = AugmentedState::new(
            array![[1u8, 1, 1], [0, 1, 1], [0, 0, 0]],
            array![[1u8, 1, 1], [1, 1, 0], [1, 1, 1]],
            vec![true; 3],
        )
        .unwrap();
        assert_eq!(derive_lifetime(&s).unwrap(), vec![3, 1, 0]);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(zeta_to_beta(&[1.0, 0.3, 1.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(zeta_to_beta(&[0.5, 0.5, 1.0]).unwrap(), vec![0.5, 0.25, 0.25]);
        assert_eq!(zeta_to_beta(&[0.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(zeta_to_beta(&[0.5, 0.5, 0.9]).is_err());
    }

    #[test]
    fn eta_examples() {
        let beta = [0.5, 0.25, 0.25];
        let eta = beta_to_eta(&beta, 100, &[50, 0, 10]);
        assert_relative_eq!(eta[0].unwrap(), 0.5);
        assert_eq!(eta[1], None);
        let eta = beta_to_eta(&[0.5, 0.0, 0.5], 100, &[0, 0, 10]);
        assert_eq!(eta[0], Some(0.0));
    }

    #[test]
    fn structure_checks() {
        let good = AugmentedState::from_intervals(4, &[0, 2, 1], &[3, 2, 1], &[true, false, true]).unwrap();
        good.check_structure().unwrap();
        assert_eq!(good.first_alive(), vec![Some(0), Some(2), Some(1)]);
        let mut bad = good.clone();
        bad.a_b[[0, 2]] = 0;
        assert!(bad.check_structure().is_err());
        let mut bad = good.clone();
        bad.a_d[[1, 0]] = 0;
        assert!(bad.check_structure().is_err());
        good.check_observed(&[vec![0, 3], vec![]]).unwrap_err();
        good.check_observed(&[vec![0, 3]]).unwrap();
        assert!(good.check_observed(&[vec![0], vec![2]]).is_err());
    }

    proptest! {
        #[test]
        fn beta_is_a_simplex(raw in prop::collection::vec(0.0f64..=1.0, 1..20)) {
            let mut zeta = raw;
            zeta.push(1.0);
            let beta = zeta_to_beta(&zeta).unwrap();
            prop_assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(beta.iter().all(|&b| b >= 0.0));
        }

        #[test]
        fn abundance_bounded_by_inclusion(
            rows in prop::collection::vec((0usize..6, 0usize..6, any::<bool>()), 1..30)
        ) {
            let k1 = 6;
            let birth: Vec<usize> = rows.iter().map(|r| r.0.min(r.1)).collect();
            let last: Vec<usize> = rows.iter().map(|r| r.0.max(r.1)).collect();
            let w: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let s = AugmentedState::from_intervals(k1, &birth, &last, &w).unwrap();
            s.check_structure().unwrap();
            let n = derive_abundance(&s).unwrap();
            let total = w.iter().filter(|&&x| x).count();
            prop_assert!(n.iter().all(|&nj| nj <= total));
            let life = derive_lifetime(&s).unwrap();
            for i in 0..w.len() {
                prop_assert_eq!(life[i], last[i] - birth[i] + 1);
            }
        }
    }
}
