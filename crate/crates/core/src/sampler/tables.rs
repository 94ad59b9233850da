//! Sufficient statistics of the survival and capture factors over the
//! included individuals. With a discrete covariate, entries sharing the same
//! effect value are merged, so each period holds at most a few rows.

use crate::math::ln_expit;

#[derive(Debug, Clone, Default)]
pub(crate) struct SurvivalTable {
    /// Per interval: effect value, number at risk, number that died.
    pub x: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
    pub dead: Vec<Vec<f64>>,
}

impl SurvivalTable {
    pub fn new(n_intervals: usize) -> Self {
        SurvivalTable {
            x: vec![Vec::new(); n_intervals],
            n: vec![Vec::new(); n_intervals],
            dead: vec![Vec::new(); n_intervals],
        }
    }

    pub fn push(&mut self, j: usize, x: f64, died: bool, merge: bool) {
        let d = if died { 1.0 } else { 0.0 };
        if merge {
            if let Some(e) = self.x[j].iter().position(|&v| v == x) {
                self.n[j][e] += 1.0;
                self.dead[j][e] += d;
                return;
            }
        }
        self.x[j].push(x);
        self.n[j].push(1.0);
        self.dead[j].push(d);
    }

    /// `sum n ln S - dead * eta` with `eta = a0 + a1 x + e` over interval `j`.
    #[inline]
    pub fn ll(&self, j: usize, a0: f64, a1: f64, e: f64) -> f64 {
        let mut s = 0.0;
        for ((&x, &n), &d) in self.x[j].iter().zip(&self.n[j]).zip(&self.dead[j]) {
            let eta = a0 + a1 * x + e;
            s += n * ln_expit(eta) - d * eta;
        }
        s
    }

    pub fn ll_all(&self, a0: f64, a1: f64, eta_s: &[f64]) -> f64 {
        (0..self.x.len()).map(|j| self.ll(j, a0, a1, eta_s[j])).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct CaptureTable {
    pub k2: Vec<usize>,
    /// Per period: effect value and number alive, plus captures per
    /// secondary flattened as `entry * k2[j] + l`.
    pub x: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
    pub caught: Vec<Vec<f64>>,
}

impl CaptureTable {
    pub fn new(k2: &[usize]) -> Self {
        let k1 = k2.len();
        CaptureTable { k2: k2.to_vec(), x: vec![Vec::new(); k1], n: vec![Vec::new(); k1], caught: vec![Vec::new(); k1] }
    }

    /// Add one alive individual in period `j`; `y(l)` gives its captures.
    pub fn push(&mut self, j: usize, x: f64, y: impl Fn(usize) -> bool, merge: bool) {
        let k = self.k2[j];
        if merge {
            if let Some(e) = self.x[j].iter().position(|&v| v == x) {
                self.n[j][e] += 1.0;
                for l in 0..k {
                    if y(l) {
                        self.caught[j][e * k + l] += 1.0;
                    }
                }
                return;
            }
        }
        self.x[j].push(x);
        self.n[j].push(1.0);
        for l in 0..k {
            self.caught[j].push(if y(l) { 1.0 } else { 0.0 });
        }
    }

    /// Capture log likelihood of period `j` with predictor
    /// `base + g1 x + eps[l]`, restricted to secondary `only` when given.
    #[inline]
    pub fn ll(&self, j: usize, base: f64, g1: f64, eps: Option<&[f64]>, only: Option<usize>) -> f64 {
        let k = self.k2[j];
        let (l0, l1) = match only {
            Some(l) => (l, l + 1),
            None => (0, k),
        };
        let mut s = 0.0;
        for (e, (&x, &n)) in self.x[j].iter().zip(&self.n[j]).enumerate() {
            let lin = base + g1 * x;
            for l in l0..l1 {
                let eta = lin + eps.map_or(0.0, |v| v[l]);
                s += n * ln_expit(eta) - (n - self.caught[j][e * k + l]) * eta;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{expit, ln_bern};
    use approx::assert_relative_eq;

    #[test]
    fn survival_table_matches_direct_sum() {
        let mut merged = SurvivalTable::new(2);
        let mut flat = SurvivalTable::new(2);
        let rows = [(0, 0.0, false), (0, 1.0, true), (0, 0.0, true), (1, 1.0, false), (0, 0.0, false)];
        for &(j, x, d) in &rows {
            merged.push(j, x, d, true);
            flat.push(j, x, d, false);
        }
        assert_eq!(merged.x[0].len(), 2);
        let (a0, a1, e) = (0.3, -0.8, 0.1);
        let direct: f64 = rows
            .iter()
            .filter(|r| r.0 == 0)
            .map(|&(_, x, d)| ln_bern(!d, expit(a0 + a1 * x + e)))
            .sum();
        assert_relative_eq!(merged.ll(0, a0, a1, e), direct, epsilon = 1e-12);
        assert_relative_eq!(flat.ll(0, a0, a1, e), direct, epsilon = 1e-12);
    }

    #[test]
    fn capture_table_matches_direct_sum() {
        let k2 = [3usize];
        let mut t = CaptureTable::new(&k2);
        let hist = [(0.0, [true, false, false]), (1.0, [false, false, true]), (0.0, [true, true, false])];
        for (x, y) in &hist {
            t.push(0, *x, |l| y[l], true);
        }
        let eps = [0.2, -0.1, 0.4];
        let (base, g1) = (-0.5, 0.7);
        let direct: f64 = hist
            .iter()
            .flat_map(|(x, y)| (0..3).map(move |l| ln_bern(y[l], expit(base + g1 * x + eps[l]))))
            .sum();
        assert_relative_eq!(t.ll(0, base, g1, Some(&eps), None), direct, epsilon = 1e-12);
        let only1: f64 = hist.iter().map(|(x, y)| ln_bern(y[1], expit(base + g1 * x + eps[1]))).sum();
        assert_relative_eq!(t.ll(0, base, g1, Some(&eps), Some(1)), only1, epsilon = 1e-12);
    }
}
