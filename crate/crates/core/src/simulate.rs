//! Forward simulation of complete and observed data from known parameters.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::{MassObservation, Standardization, DiseaseProcessParams, MassProcessParams, DEFAULT_MASS_MAX};
use crate::data::{CaptureData, CovariateKind};
use crate::error::{Error, Result};
use crate::likelihood::LinkParams;
use crate::math::{expit, logit, sample_truncated_normal};
use crate::model::ModelParams;
use crate::popstate::BirthParams;
use crate::sampler::ChainState;

/// Everything needed to simulate one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub k2: Vec<usize>,
    pub m: usize,
    pub robust: bool,
    pub covariate: CovariateKind,
    pub params: ModelParams,
    /// Scale on which mass enters the links.
    #[serde(default)]
    pub standardization: Option<Standardization>,
    #[serde(default = "default_mass_max")]
    pub mass_max: f64,
    /// Probability that an observed categorical state is recorded unknown.
    #[serde(default)]
    pub miss_rate: f64,
}

fn default_mass_max() -> f64 {
    DEFAULT_MASS_MAX
}

impl SimulationConfig {
    pub fn k1(&self) -> usize {
        self.k2.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1() < 2 || self.k2.contains(&0) {
            return Err(Error::Dimension("need at least two primary periods with samples".into()));
        }
        if !self.robust && self.k2.iter().any(|&n| n != 1) {
            return Err(Error::Dimension("standard design needs one secondary per primary".into()));
        }
        if self.params.link.has_eps() != self.robust {
            return Err(Error::Dimension("per-secondary effects must be present exactly for robust designs".into()));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::InvalidParameter("miss_rate must lie in [0, 1]".into()));
        }
        if self.covariate == CovariateKind::Mass && self.standardization.is_none() {
            return Err(Error::InvalidParameter("mass simulation needs a standardization".into()));
        }
        self.params.validate(&self.k2, self.covariate)
    }
}

/// The complete simulated state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub params: ModelParams,
    pub standardization: Option<Standardization>,
    pub w: Vec<bool>,
    /// First and last period alive (0-based).
    pub birth: Vec<usize>,
    pub last_alive: Vec<usize>,
    /// Latent mean mass per (individual, period).
    pub lambda: Vec<Vec<f64>>,
    /// True categorical state per (individual, period).
    pub states: Vec<Vec<u8>>,
    /// True mass behind each recorded mass, in the order of `CaptureData::masses`.
    pub true_masses: Vec<f64>,
    /// Row in the truth of each observed individual, in data order.
    pub observed_rows: Vec<usize>,
    pub n_total: usize,
    pub n_by_period: Vec<usize>,
    /// `n_by_state[s][j]`: included individuals alive at `j` in state `s + 1`.
    pub n_by_state: Vec<Vec<usize>>,
    pub lifetime: Vec<usize>,
}

impl TruthRecord {
    /// Chain state equal to the truth, with rows ordered observed-first as the
    /// sampler expects.
    pub fn chain_state(&self, data: &CaptureData) -> Result<ChainState> {
        let m = self.w.len();
        if data.n_observed() != self.observed_rows.len() {
            return Err(Error::Dimension("data and truth disagree on the observed individuals".into()));
        }
        let mut order = self.observed_rows.clone();
        let mut seen = vec![false; m];
        order.iter().for_each(|&r| seen[r] = true);
        order.extend((0..m).filter(|&r| !seen[r]));
        let k1 = self.n_by_period.len();
        let lambda = if self.lambda.is_empty() {
            Array2::zeros((0, 0))
        } else {
            Array2::from_shape_fn((m, k1), |(i, j)| self.lambda[order[i]][j])
        };
        let z_state = if self.states.is_empty() {
            Array2::zeros((0, 0))
        } else {
            Array2::from_shape_fn((m, k1), |(i, j)| self.states[order[i]][j])
        };
        Ok(ChainState {
            params: self.params.clone(),
            w: order.iter().map(|&r| self.w[r]).collect(),
            b: order.iter().map(|&r| self.birth[r]).collect(),
            d: order.iter().map(|&r| self.last_alive[r]).collect(),
            lambda,
            z_mass: self.true_masses.clone(),
            z_state,
        })
    }
}

/// Simulate truth and the observed data set.
pub fn generate(cfg: &SimulationConfig, seed: u64) -> Result<(TruthRecord, CaptureData)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k1 = cfg.k1();
    let m = cfg.m;
    let p = &cfg.params;
    let link = &p.link;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut w = vec![false; m];
    let mut birth = vec![0; m];
    let mut last = vec![0; m];
    let mut lambda = Vec::new();
    let mut states = Vec::new();
    for i in 0..m {
        w[i] = rng.random::<f64>() < p.birth.psi;
        let mut b = k1 - 1;
        for j in 0..k1 - 1 {
            if rng.random::<f64>() < p.birth.zeta[j] {
                b = j;
                break;
            }
        }
        birth[i] = b;
        let mut effect = vec![0.0; k1];
        match cfg.covariate {
            CovariateKind::Mass => {
                let mp = p.mass.as_ref().expect("validated");
                let std = cfg.standardization.expect("validated");
                let mut row = vec![0.0; k1];
                row[b] = mp.mu_lambda + mp.sigma_lambda1 * normal(&mut rng);
                for j in b + 1..k1 {
                    row[j] = row[j - 1] + mp.delta[j - 1] + mp.sigma_lambda2 * normal(&mut rng);
                }
                for j in (0..b).rev() {
                    row[j] = row[j + 1] - mp.delta[j] + mp.sigma_lambda2 * normal(&mut rng);
                }
                effect = row.iter().map(|&v| std.apply(v)).collect();
                lambda.push(row);
            }
            CovariateKind::Categorical => {
                let dp = p.disease.as_ref().expect("validated");
                let s = dp.n_states();
                let mut row = vec![1u8; k1];
                row[b] = draw_index(&mut rng, &dp.nu) as u8 + 1;
                for j in b + 1..k1 {
                    row[j] = draw_index(&mut rng, &dp.omega[row[j - 1] as usize - 1]) as u8 + 1;
                }
                for v in row.iter_mut().take(b) {
                    *v = rng.random_range(0..s) as u8 + 1;
                }
                effect = row.iter().map(|&v| f64::from(u8::from(v == 2))).collect();
                states.push(row);
            }
            CovariateKind::None => {}
        }
        let mut d = b;
        while d + 1 < k1 && rng.random::<f64>() < expit(link.survival_logit(d, effect[d])) {
            d += 1;
        }
        last[i] = d;
    }

    // captures and covariate observations
    let offs: Vec<usize> = std::iter::once(0).chain(cfg.k2.iter().scan(0, |a, &x| { *a += x; Some(*a) })).collect();
    let mut hist: Vec<(usize, Vec<u8>)> = Vec::new();
    let mut obs_masses: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    let mut obs_states: Vec<Vec<u8>> = Vec::new();
    for i in 0..m {
        if !w[i] {
            continue;
        }
        let mut y = vec![0u8; offs[k1]];
        let mut st_row = vec![0u8; k1];
        let mut masses = Vec::new();
        for j in birth[i]..=last[i] {
            let x = match cfg.covariate {
                CovariateKind::Mass => cfg.standardization.unwrap().apply(lambda[i][j]),
                CovariateKind::Categorical => f64::from(u8::from(states[i][j] == 2)),
                CovariateKind::None => 0.0,
            };
            for l in 0..cfg.k2[j] {
                if rng.random::<f64>() < expit(link.capture_logit(j, l, x)) {
                    y[offs[j] + l] = 1;
                    match cfg.covariate {
                        CovariateKind::Mass => {
                            let sz = p.mass.as_ref().unwrap().sigma_z;
                            let z = sample_truncated_normal(&mut rng, lambda[i][j], sz, 0.0, f64::INFINITY);
                            let rec = z.round().min(cfg.mass_max);
                            masses.push((j, l, rec, z));
                        }
                        CovariateKind::Categorical => st_row[j] = states[i][j],
                        CovariateKind::None => {}
                    }
                }
            }
        }
        if y.contains(&1) {
            let row = hist.len();
            hist.push((i, y));
            obs_states.push(st_row);
            obs_masses.extend(masses.into_iter().map(|(j, l, rec, z)| (row, j, l, rec, z)));
        }
    }
    let n_obs = hist.len();
    let mut captures = Array2::<u8>::zeros((n_obs, offs[k1]));
    let mut obs_state_arr = Array2::<u8>::zeros((n_obs, k1));
    for (r, (_, y)) in hist.iter().enumerate() {
        for (o, &v) in y.iter().enumerate() {
            captures[[r, o]] = v;
        }
        for j in 0..k1 {
            obs_state_arr[[r, j]] = obs_states[r][j];
        }
    }
    if cfg.covariate == CovariateKind::Categorical {
        obs_state_arr = mask_disease(&obs_state_arr, cfg.miss_rate, rng.random());
    }
    let mut masses = Vec::with_capacity(obs_masses.len());
    let mut true_masses = Vec::with_capacity(obs_masses.len());
    for &(r, j, l, rec, z) in &obs_masses {
        masses.push(MassObservation::new(r, j, l, rec, cfg.mass_max)?);
        true_masses.push(z);
    }
    let data = CaptureData {
        k2: cfg.k2.clone(),
        covariate: cfg.covariate,
        mass_max: cfg.mass_max,
        n_states: p.disease.as_ref().map_or(2, |d| d.n_states() as u8),
        ids: hist.iter().map(|(i, _)| format!("s{:04}", i + 1)).collect(),
        captures,
        masses,
        states: obs_state_arr,
    };

    let mut n_by_period = vec![0; k1];
    let n_states = p.disease.as_ref().map_or(0, |d| d.n_states());
    let mut n_by_state = vec![vec![0; k1]; n_states];
    for i in (0..m).filter(|&i| w[i]) {
        for j in birth[i]..=last[i] {
            n_by_period[j] += 1;
            if n_states > 0 {
                n_by_state[states[i][j] as usize - 1][j] += 1;
            }
        }
    }
    let truth = TruthRecord {
        params: p.clone(),
        standardization: cfg.standardization,
        lifetime: (0..m).map(|i| last[i] - birth[i] + 1).collect(),
        n_total: w.iter().filter(|&&v| v).count(),
        w,
        birth,
        last_alive: last,
        lambda,
        states,
        true_masses,
        observed_rows: hist.iter().map(|(i, _)| *i).collect(),
        n_by_period,
        n_by_state,
    };
    Ok((truth, data))
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Replace each recorded (non-zero) state by the unknown marker 0 with
/// probability `miss_rate`, independently.
pub fn mask_disease(states: &Array2<u8>, miss_rate: f64, seed: u64) -> Array2<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    states.mapv(|s| if s != 0 && rng.random::<f64>() < miss_rate { 0 } else { s })
}

/// Vole-like robust design: 6 primaries of 5 secondaries, mass covariate
/// with roughly one recorded mass in ten at the scale maximum.
pub fn vole_like() -> SimulationConfig {
    let k2 = vec![5; 6];
    let link = LinkParams {
        alpha0: logit(0.7),
        alpha1: 0.3,
        gamma0: logit(0.35),
        gamma1: 0.5,
        eta_s: vec![0.25, -0.2, 0.1, -0.3, 0.15],
        eta_p: vec![-0.2, 0.3, 0.0, -0.25, 0.2, -0.1],
        eps_p: vec![
            vec![0.1, -0.1, 0.05, 0.0, -0.05],
            vec![-0.15, 0.1, 0.0, 0.05, 0.0],
            vec![0.0, 0.1, -0.1, 0.15, -0.1],
            vec![0.05, -0.05, 0.1, -0.1, 0.0],
            vec![-0.1, 0.0, 0.15, -0.05, 0.05],
            vec![0.1, -0.1, 0.0, 0.05, -0.05],
        ],
        sigma_s: 0.25,
        sigma_p1: 0.25,
        sigma_p2: 0.1,
    };
    SimulationConfig {
        k2,
        m: 250,
        robust: true,
        covariate: CovariateKind::Mass,
        params: ModelParams {
            birth: BirthParams { zeta: vec![0.45, 0.2, 0.2, 0.2, 0.2, 1.0], psi: 0.65 },
            link,
            mass: Some(MassProcessParams {
                mu_lambda: 45.5,
                sigma_lambda1: 7.0,
                delta: vec![0.8; 5],
                sigma_lambda2: 2.0,
                sigma_z: 1.5,
            }),
            disease: None,
        },
        standardization: Some(Standardization { loc: 50.0, scale: 8.0 }),
        mass_max: DEFAULT_MASS_MAX,
        miss_rate: 0.0,
    }
}

/// Finch-like standard design: 16 occasions, two-state disease covariate
/// with 20% of recorded states masked.
pub fn finch_like() -> SimulationConfig {
    let k1 = 16;
    let eta_s = vec![0.2, -0.1, 0.15, -0.25, 0.05, 0.1, -0.2, 0.25, -0.05, 0.0, 0.15, -0.15, 0.1, -0.1, 0.05];
    let eta_p = vec![0.1, -0.2, 0.25, 0.0, -0.1, 0.2, -0.25, 0.05, 0.15, -0.15, 0.0, 0.2, -0.05, 0.1, -0.2, 0.05];
    let mut zeta = vec![0.1; k1];
    zeta[0] = 0.3;
    zeta[k1 - 1] = 1.0;
    SimulationConfig {
        k2: vec![1; k1],
        m: 1200,
        robust: false,
        covariate: CovariateKind::Categorical,
        params: ModelParams {
            birth: BirthParams { zeta, psi: 0.7 },
            link: LinkParams {
                alpha0: logit(0.75),
                alpha1: -0.8,
                gamma0: logit(0.35),
                gamma1: 0.5,
                eta_s,
                eta_p,
                eps_p: Vec::new(),
                sigma_s: 0.2,
                sigma_p1: 0.2,
                sigma_p2: 1.0,
            },
            mass: None,
            disease: Some(DiseaseProcessParams { nu: vec![0.9, 0.1], omega: vec![vec![0.96, 0.04], vec![0.25, 0.75]] }),
        },
        standardization: None,
        mass_max: DEFAULT_MASS_MAX,
        miss_rate: 0.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degenerate(p_capture: f64) -> SimulationConfig {
        let mut cfg = finch_like();
        cfg.k2 = vec![1; 4];
        cfg.m = 30;
        cfg.covariate = CovariateKind::None;
        cfg.params.disease = None;
        cfg.params.birth = BirthParams { zeta: vec![1.0; 4], psi: 1.0 };
        cfg.params.link = LinkParams::zeros(&cfg.k2, false);
        cfg.params.link.alpha0 = 1e3;
        cfg.params.link.gamma0 = if p_capture == 1.0 { 1e3 } else { -1e3 };
        cfg
    }

    #[test]
    fn certain_survival_and_capture() {
        let (truth, data) = generate(&degenerate(1.0), 1).unwrap();
        assert_eq!(truth.n_by_period, vec![30; 4]);
        assert_eq!(data.n_observed(), 30);
        assert!(data.captures.iter().all(|&v| v == 1));
    }

    #[test]
    fn no_capture_gives_empty_data() {
        let (truth, data) = generate(&degenerate(0.0), 2).unwrap();
        assert_eq!(data.n_observed(), 0);
        assert_eq!(truth.n_total, 30);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = vole_like();
        assert_eq!(generate(&cfg, 5).unwrap(), generate(&cfg, 5).unwrap());
        assert_ne!(generate(&cfg, 5).unwrap().1, generate(&cfg, 6).unwrap().1);
    }

    #[test]
    fn mask_rates() {
        let states = Array2::from_elem((1000, 1), 1u8);
        assert_eq!(mask_disease(&states, 0.0, 1), states);
        assert!(mask_disease(&states, 1.0, 1).iter().all(|&s| s == 0));
        let masked = mask_disease(&states, 0.3, 7).iter().filter(|&&s| s == 0).count() as f64;
        assert!((masked - 300.0).abs() <= 3.0 * (1000.0f64 * 0.3 * 0.7).sqrt(), "{masked}");
    }

    #[test]
    fn truth_is_structurally_valid() {
        for cfg in [vole_like(), finch_like()] {
            let (truth, data) = generate(&cfg, 11).unwrap();
            let st = truth.chain_state(&data).unwrap();
            let aug = st.augmented(cfg.k1()).unwrap();
            aug.check_structure().unwrap();
            let periods: Vec<Vec<usize>> = (0..data.n_observed()).map(|i| data.captured_periods(i)).collect();
            aug.check_observed(&periods).unwrap();
            assert_eq!(crate::popstate::derive_abundance(&aug).unwrap(), truth.n_by_period);
        }
    }

    #[test]
    fn disease_chain_follows_omega() {
        // transitions among included, post-birth cells match omega
        let mut cfg = finch_like();
        cfg.m = 4000;
        let (truth, _) = generate(&cfg, 3).unwrap();
        let mut counts = [[0.0f64; 2]; 2];
        for i in (0..cfg.m).filter(|&i| truth.w[i]) {
            for j in truth.birth[i] + 1..cfg.k1() {
                let (h, l) = (truth.states[i][j - 1] as usize - 1, truth.states[i][j] as usize - 1);
                counts[h][l] += 1.0;
            }
        }
        for h in 0..2 {
            let n = counts[h][0] + counts[h][1];
            let f = counts[h][h] / n;
            let p = cfg.params.disease.as_ref().unwrap().omega[h][h];
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n).sqrt(), "state {h}: {f} vs {p}");
        }
    }
}
