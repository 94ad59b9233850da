//! One Markov chain: data prepared for fast access, the mutable chain state
//! and the Gibbs sweep.
//!
//! Sweep order: inclusion of never-observed pseudo-individuals, birth then
//! death period per included individual, latent covariates, then parameters
//! (psi, zeta, link block, covariate process).
//!
//! Pseudo-individuals with `w = 0` keep an auxiliary trajectory drawn afresh
//! from its prior at the start of each sweep; the parameter updates condition
//! on included individuals only. Covariate cells before birth follow a
//! pseudo-prior (a backward random walk for mass, uniform states for the
//! categorical chain) that integrates to one and so leaves the model intact.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use super::config::SamplerConfig;
use super::scales::{Rw, Scales};
use super::tables::{CaptureTable, SurvivalTable};
use crate::covariates::{
    covariate_effect, log_disease_process, log_mass_obs, log_mass_walk, CovariateView, DiseaseProcessParams,
    MassProcessParams, MassRecord, Standardization,
};
use crate::data::{CaptureData, CovariateKind};
use crate::error::{Error, Result};
use crate::likelihood::{link_probabilities, log_birth, log_capture_robust, log_mortality, LinkParams};
use crate::math::{expit, ln_expit, normal_ln_pdf, sample_log_weights, sample_truncated_normal, std_normal_ln_cdf};
use crate::model::{ModelParams, ModelSpec, Priors};
use crate::popstate::{
    beta_to_eta, derive_abundance, zeta_to_beta, AugmentedState, BirthParams,
};

/// Data and settings shared by every chain.
pub(crate) struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub priors: &'a Priors,
    pub cfg: &'a SamplerConfig,
    pub k1: usize,
    pub k2: Vec<usize>,
    pub offs: Vec<usize>,
    pub m: usize,
    pub n_obs: usize,
    y: Vec<u8>,
    pub first_cap: Vec<Option<usize>>,
    pub last_cap: Vec<Option<usize>>,
    obs_state: Array2<u8>,
    pub records: Vec<MassRecord>,
    rec_range: Array2<(u32, u32)>,
    pub std: Standardization,
    pub robust: bool,
    pub has_slope: bool,
    n_states: usize,
}

impl<'a> Problem<'a> {
    pub fn new(spec: &'a ModelSpec, priors: &'a Priors, cfg: &'a SamplerConfig, data: &CaptureData) -> Result<Self> {
        spec.validate(data)?;
        priors.validate()?;
        cfg.validate()?;
        data.validate()?;
        let k1 = data.k1();
        let m = spec.m;
        let n_obs = data.n_observed();
        let offs = data.occasion_offsets();
        let mut first_cap = vec![None; m];
        let mut last_cap = vec![None; m];
        for i in 0..n_obs {
            let (f, l) = data.first_last_capture(i).expect("validated");
            first_cap[i] = Some(f);
            last_cap[i] = Some(l);
        }
        let mut obs_state = Array2::zeros((0, 0));
        let mut records = Vec::new();
        let mut rec_range = Array2::from_elem((0, 0), (0u32, 0u32));
        let mut std = Standardization { loc: 0.0, scale: 1.0 };
        match spec.covariate {
            CovariateKind::Categorical => {
                obs_state = Array2::zeros((m, k1));
                if n_obs > 0 {
                    obs_state.slice_mut(ndarray::s![..n_obs, ..]).assign(&data.states);
                }
                if data.states.iter().any(|&s| s as usize > spec.n_states as usize) {
                    return Err(Error::Validation("observed state code exceeds n_states".into()));
                }
            }
            CovariateKind::Mass => {
                records = data.mass_records()?;
                records.sort_by_key(|r| (r.i, r.j, r.l));
                rec_range = Array2::from_elem((m, k1), (0u32, 0u32));
                let mut start = 0;
                while start < records.len() {
                    let (i, j) = (records[start].i, records[start].j);
                    let mut end = start;
                    while end < records.len() && records[end].i == i && records[end].j == j {
                        end += 1;
                    }
                    rec_range[[i, j]] = (start as u32, end as u32);
                    start = end;
                }
                std = match spec.standardization {
                    Some(s) => s,
                    None => Standardization::from_observations(&data.masses)?,
                };
                if !spec.mass_censoring && records.iter().any(|r| !(r.z_obs > 0.0)) {
                    return Err(Error::Validation("raw mass model needs strictly positive masses".into()));
                }
            }
            CovariateKind::None => {}
        }
        Ok(Problem {
            spec,
            priors,
            cfg,
            k1,
            k2: data.k2.clone(),
            offs,
            m,
            n_obs,
            y: data.captures.iter().copied().collect(),
            first_cap,
            last_cap,
            obs_state,
            records,
            rec_range,
            std,
            robust: spec.robust,
            has_slope: spec.covariate != CovariateKind::None,
            n_states: spec.n_states as usize,
        })
    }

    #[inline]
    pub fn y(&self, i: usize, j: usize, l: usize) -> bool {
        i < self.n_obs && self.y[i * self.offs[self.k1] + self.offs[j] + l] == 1
    }

    #[inline]
    fn records_at(&self, i: usize, j: usize) -> &[MassRecord] {
        let (a, b) = self.rec_range[[i, j]];
        &self.records[a as usize..b as usize]
    }

    fn captured_periods(&self, i: usize) -> Vec<usize> {
        (0..self.k1).filter(|&j| (0..self.k2[j]).any(|l| self.y(i, j, l))).collect()
    }

    fn mass_on(&self) -> bool {
        self.spec.covariate == CovariateKind::Mass
    }

    fn disease_on(&self) -> bool {
        self.spec.covariate == CovariateKind::Categorical
    }
}

/// Latent states and parameters of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ModelParams,
    pub w: Vec<bool>,
    /// First period alive (0-based).
    pub b: Vec<usize>,
    /// Last period alive (0-based), `b <= d`.
    pub d: Vec<usize>,
    /// Latent mean mass, `M x k1` (empty without a mass covariate).
    pub lambda: Array2<f64>,
    /// Latent true mass per recorded mass, in record order.
    pub z_mass: Vec<f64>,
    /// Categorical states coded `1..=S`, `M x k1` (empty otherwise).
    pub z_state: Array2<u8>,
}

impl ChainState {
    pub fn augmented(&self, k1: usize) -> Result<AugmentedState> {
        AugmentedState::from_intervals(k1, &self.b, &self.d, &self.w)
    }
}

pub(crate) struct Chain<'p, 'a> {
    pb: &'p Problem<'a>,
    pub st: ChainState,
    rng: ChaCha8Rng,
    sc: Scales,
    gain: Option<f64>,
    // per-individual scratch
    xs: Vec<f64>,
    cap: Vec<f64>,
    ls: Vec<f64>,
    ld: Vec<f64>,
    wts: Vec<f64>,
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

#[inline]
fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_cat<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn draw_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng)).collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 {
        g.iter().map(|v| v / s).collect()
    } else {
        // all shapes tiny and every gamma draw underflowed
        let mut out = vec![0.0; alpha.len()];
        out[draw_cat(rng, alpha)] = 1.0;
        out
    }
}

fn draw_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive shapes").sample(rng)
}

impl<'p, 'a> Chain<'p, 'a> {
    pub fn new(pb: &'p Problem<'a>, st: ChainState, rng: ChaCha8Rng) -> Self {
        let sc = Scales::new(pb.cfg, &pb.k2, pb.m, pb.mass_on());
        let k = pb.k1;
        Chain {
            pb,
            st,
            rng,
            sc,
            gain: None,
            xs: vec![0.0; k],
            cap: vec![0.0; k],
            ls: vec![0.0; k],
            ld: vec![0.0; k],
            wts: Vec::with_capacity(k + 1),
        }
    }

    pub fn rng_for(seed: u64, chain: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain as u64);
        rng
    }

    pub fn set_adaptation(&mut self, t: Option<u64>) {
        self.gain = t.map(|t| self.pb.cfg.adapt_gain / (t as f64).powf(0.6));
    }

    pub fn reset_acceptance(&mut self) {
        self.sc.reset_counts();
    }

    pub fn acceptance(&self) -> std::collections::BTreeMap<String, f64> {
        self.sc.acceptance()
    }

    pub fn sweep(&mut self) -> Result<()> {
        if !self.pb.cfg.freeze_latent {
            self.update_inclusion();
            self.update_birth_death()?;
            self.update_covariates();
        }
        self.update_parameters();
        Ok(())
    }

    // ---- elementary terms -------------------------------------------------

    #[inline]
    fn effect(&self, i: usize, j: usize) -> f64 {
        match self.pb.spec.covariate {
            CovariateKind::None => 0.0,
            CovariateKind::Mass => self.pb.std.apply(self.st.lambda[[i, j]]),
            CovariateKind::Categorical => f64::from(u8::from(self.st.z_state[[i, j]] == 2)),
        }
    }

    #[inline]
    fn state_effect(s: u8) -> f64 {
        f64::from(u8::from(s == 2))
    }

    /// Capture log probability of individual `i`'s history in period `j`
    /// given it is alive with effect `x`.
    #[inline]
    fn cap_term(&self, i: usize, j: usize, x: f64) -> f64 {
        if self.pb.cfg.prior_only {
            return 0.0;
        }
        let lp = &self.st.params.link;
        let base = lp.gamma0 + lp.gamma1 * x + lp.eta_p[j];
        let mut s = 0.0;
        for l in 0..self.pb.k2[j] {
            let eta = base + if self.pb.robust { lp.eps_p[j][l] } else { 0.0 };
            s += if self.pb.y(i, j, l) { ln_expit(eta) } else { ln_expit(-eta) };
        }
        s
    }

    #[inline]
    fn surv_logit(&self, j: usize, x: f64) -> f64 {
        let lp = &self.st.params.link;
        lp.alpha0 + lp.alpha1 * x + lp.eta_s[j]
    }

    /// Survival factor attached to period `j` for an individual alive in
    /// `b..=d`, as a function of the effect at `j`.
    #[inline]
    fn surv_term(&self, j: usize, d: usize, x: f64) -> f64 {
        if j + 1 >= self.pb.k1 || j > d {
            0.0
        } else if j < d {
            ln_expit(self.surv_logit(j, x))
        } else {
            ln_expit(-self.surv_logit(j, x))
        }
    }

    fn mass_obs_term(&self, i: usize, j: usize, lam: f64, sigma_z: f64) -> f64 {
        if self.pb.cfg.prior_only {
            return 0.0;
        }
        let recs = self.pb.records_at(i, j);
        if recs.is_empty() {
            return 0.0;
        }
        let (a, _) = self.pb.rec_range[[i, j]];
        if self.pb.spec.mass_censoring {
            let mut s = -(recs.len() as f64) * std_normal_ln_cdf(lam / sigma_z);
            for (k, _) in recs.iter().enumerate() {
                s += normal_ln_pdf(self.st.z_mass[a as usize + k], lam, sigma_z);
            }
            s
        } else {
            recs.iter().map(|r| normal_ln_pdf(r.z_obs, lam, sigma_z)).sum()
        }
    }

    fn fill_terms(&mut self, i: usize) {
        let k = self.pb.k1;
        for j in 0..k {
            let x = self.effect(i, j);
            self.xs[j] = x;
            self.cap[j] = self.cap_term(i, j, x);
            if j + 1 < k {
                let eta = self.surv_logit(j, x);
                let l = ln_expit(eta);
                self.ls[j] = l;
                self.ld[j] = l - eta;
            }
        }
    }

    /// Covariate-process log density as a function of the birth period.
    fn cov_birth_term(&self, i: usize, b: usize, suffix: &[f64]) -> f64 {
        match self.pb.spec.covariate {
            CovariateKind::None => 0.0,
            CovariateKind::Mass => {
                let mp = self.st.params.mass.as_ref().expect("mass params");
                normal_ln_pdf(self.st.lambda[[i, b]], mp.mu_lambda, mp.sigma_lambda1)
            }
            CovariateKind::Categorical => {
                let dp = self.st.params.disease.as_ref().expect("disease params");
                let s = self.st.z_state[[i, b]] as usize - 1;
                dp.nu[s].ln() + suffix[b] - b as f64 * (self.pb.n_states as f64).ln()
            }
        }
    }

    /// `suffix[b] = sum_{j > b} ln omega(z_{j-1}, z_j)` for the categorical chain.
    fn transition_suffix(&self, i: usize) -> Vec<f64> {
        let k = self.pb.k1;
        let mut suf = vec![0.0; k];
        if let Some(dp) = self.st.params.disease.as_ref() {
            for j in (0..k - 1).rev() {
                let h = self.st.z_state[[i, j]] as usize - 1;
                let l = self.st.z_state[[i, j + 1]] as usize - 1;
                suf[j] = suf[j + 1] + dp.omega[h][l].ln();
            }
        }
        suf
    }

    // ---- inclusion ----------------------------------------------------------

    fn refresh_ghost(&mut self, i: usize) {
        let k = self.pb.k1;
        let mut b = k - 1;
        for j in 0..k - 1 {
            if self.rng.random::<f64>() < self.st.params.birth.zeta[j] {
                b = j;
                break;
            }
        }
        match self.pb.spec.covariate {
            CovariateKind::Mass => {
                let mp = self.st.params.mass.clone().expect("mass params");
                let n = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
                self.st.lambda[[i, b]] = mp.mu_lambda + mp.sigma_lambda1 * n(&mut self.rng);
                for j in b + 1..k {
                    self.st.lambda[[i, j]] = self.st.lambda[[i, j - 1]] + mp.delta[j - 1] + mp.sigma_lambda2 * n(&mut self.rng);
                }
                for j in (0..b).rev() {
                    self.st.lambda[[i, j]] = self.st.lambda[[i, j + 1]] - mp.delta[j] + mp.sigma_lambda2 * n(&mut self.rng);
                }
            }
            CovariateKind::Categorical => {
                let dp = self.st.params.disease.clone().expect("disease params");
                let s = self.pb.n_states;
                self.st.z_state[[i, b]] = draw_cat(&mut self.rng, &dp.nu) as u8 + 1;
                for j in b + 1..k {
                    let prev = self.st.z_state[[i, j - 1]] as usize - 1;
                    self.st.z_state[[i, j]] = draw_cat(&mut self.rng, &dp.omega[prev]) as u8 + 1;
                }
                for j in 0..b {
                    self.st.z_state[[i, j]] = self.rng.random_range(0..s) as u8 + 1;
                }
            }
            CovariateKind::None => {}
        }
        let mut d = b;
        while d + 1 < k {
            let s = expit(self.surv_logit(d, self.effect(i, d)));
            if self.rng.random::<f64>() < s {
                d += 1;
            } else {
                break;
            }
        }
        self.st.b[i] = b;
        self.st.d[i] = d;
    }

    fn update_inclusion(&mut self) {
        let psi = self.st.params.birth.psi;
        let (l_in, l_out) = (psi.ln(), (1.0 - psi).ln());
        for i in self.pb.n_obs..self.pb.m {
            if !self.st.w[i] {
                self.refresh_ghost(i);
            }
            let (b, d) = (self.st.b[i], self.st.d[i]);
            let p0: f64 = (b..=d).map(|j| self.cap_term(i, j, self.effect(i, j))).sum();
            let pick = sample_log_weights(&mut self.rng, &[l_out, l_in + p0]);
            self.st.w[i] = pick == Some(1);
        }
    }

    // ---- birth and death ----------------------------------------------------

    /// Log weights of each birth option `0..=hi` given the current death period.
    fn birth_weights(&mut self, i: usize) -> usize {
        let d = self.st.d[i];
        let hi = self.pb.first_cap[i].map_or(d, |f| f.min(d));
        let suffix = if self.pb.disease_on() { self.transition_suffix(i) } else { Vec::new() };
        let mut wts = std::mem::take(&mut self.wts);
        wts.clear();
        wts.resize(hi + 1, 0.0);
        let mut acc: f64 = self.cap[hi..=d].iter().sum::<f64>() + self.ls[hi..d].iter().sum::<f64>();
        for b in (0..=hi).rev() {
            if b < hi {
                acc += self.ls[b] + self.cap[b];
            }
            wts[b] = acc + self.cov_birth_term(i, b, &suffix);
        }
        let zeta = &self.st.params.birth.zeta;
        let mut pre = 0.0;
        for (b, wb) in wts.iter_mut().enumerate() {
            *wb += pre + zeta[b].ln();
            pre += (1.0 - zeta[b]).ln();
        }
        self.wts = wts;
        hi
    }

    /// Log weights of each death option `lo..k1` given the current birth period.
    fn death_weights(&mut self, i: usize) -> usize {
        let k = self.pb.k1;
        let b = self.st.b[i];
        let lo = self.pb.last_cap[i].map_or(b, |l| l.max(b));
        self.wts.clear();
        let mut acc: f64 = self.ls[b..lo].iter().sum::<f64>() + self.cap[b..=lo].iter().sum::<f64>();
        for d in lo..k {
            if d + 1 < k {
                self.wts.push(acc + self.ld[d]);
                acc += self.ls[d] + self.cap[d + 1];
            } else {
                self.wts.push(acc);
            }
        }
        lo
    }

    fn update_birth_death(&mut self) -> Result<()> {
        for i in 0..self.pb.m {
            if !self.st.w[i] {
                continue;
            }
            self.fill_terms(i);
            self.birth_weights(i);
            let b = sample_log_weights(&mut self.rng, &self.wts)
                .ok_or_else(|| Error::Invariant(format!("no admissible birth period for individual {i}")))?;
            self.st.b[i] = b;
            let lo = self.death_weights(i);
            let off = sample_log_weights(&mut self.rng, &self.wts)
                .ok_or_else(|| Error::Invariant(format!("no admissible death period for individual {i}")))?;
            self.st.d[i] = lo + off;
        }
        Ok(())
    }

    // ---- latent covariates ---------------------------------------------------

    fn update_covariates(&mut self) {
        match self.pb.spec.covariate {
            CovariateKind::Mass => self.update_mass(),
            CovariateKind::Categorical => self.update_states(),
            CovariateKind::None => {}
        }
    }

    /// Log density of `lambda[i, j] = v` given everything else, for an
    /// included individual alive at `j`.
    fn lambda_local(&self, i: usize, j: usize, v: f64, mp: &MassProcessParams) -> f64 {
        let k = self.pb.k1;
        let (b, d) = (self.st.b[i], self.st.d[i]);
        let mut s = 0.0;
        if j > 0 {
            s += normal_ln_pdf(v, self.st.lambda[[i, j - 1]] + mp.delta[j - 1], mp.sigma_lambda2);
        }
        if j + 1 < k {
            s += normal_ln_pdf(self.st.lambda[[i, j + 1]], v + mp.delta[j], mp.sigma_lambda2);
        }
        if j == b {
            s += normal_ln_pdf(v, mp.mu_lambda, mp.sigma_lambda1);
        }
        let x = self.pb.std.apply(v);
        s += self.surv_term(j, d, x) + self.cap_term(i, j, x) + self.mass_obs_term(i, j, v, mp.sigma_z);
        s
    }

    fn update_mass(&mut self) {
        let k = self.pb.k1;
        let mp = self.st.params.mass.clone().expect("mass params");
        let target = self.pb.cfg.target_accept;
        for i in 0..self.pb.m {
            if !self.st.w[i] {
                continue;
            }
            let (b, d) = (self.st.b[i], self.st.d[i]);
            for j in 0..k {
                if j < b || j > d {
                    // Gaussian bridge between the walk neighbours
                    let s2 = mp.sigma_lambda2;
                    let (mean, sd) = if j == 0 {
                        (self.st.lambda[[i, 1]] - mp.delta[0], s2)
                    } else if j + 1 == k {
                        (self.st.lambda[[i, j - 1]] + mp.delta[j - 1], s2)
                    } else {
                        let from_left = self.st.lambda[[i, j - 1]] + mp.delta[j - 1];
                        let from_right = self.st.lambda[[i, j + 1]] - mp.delta[j];
                        (0.5 * (from_left + from_right), s2 * std::f64::consts::FRAC_1_SQRT_2)
                    };
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    self.st.lambda[[i, j]] = mean + sd * z;
                } else {
                    let cur = self.st.lambda[[i, j]];
                    let step: f64 = StandardNormal.sample(&mut self.rng);
                    let prop = cur + self.sc.lambda[[i, j]].s() * step;
                    let lp_cur = self.lambda_local(i, j, cur, &mp);
                    let lp_new = self.lambda_local(i, j, prop, &mp);
                    let acc = accept(&mut self.rng, lp_new - lp_cur);
                    if acc {
                        self.st.lambda[[i, j]] = prop;
                    }
                    self.sc.lambda[[i, j]].record(acc, self.gain, target);
                }
            }
        }
        if self.pb.spec.mass_censoring && !self.pb.cfg.prior_only {
            for (r, rec) in self.pb.records.iter().enumerate() {
                let lam = self.st.lambda[[rec.i, rec.j]];
                self.st.z_mass[r] = sample_truncated_normal(&mut self.rng, lam, mp.sigma_z, rec.lo, rec.hi);
            }
        }
    }

    fn update_states(&mut self) {
        let k = self.pb.k1;
        let n_states = self.pb.n_states;
        let dp = self.st.params.disease.clone().expect("disease params");
        let mut lw = vec![0.0; n_states];
        for i in 0..self.pb.m {
            if !self.st.w[i] {
                continue;
            }
            let (b, d) = (self.st.b[i], self.st.d[i]);
            for j in 0..k {
                if self.pb.obs_state[[i, j]] != 0 {
                    continue;
                }
                if j < b {
                    self.st.z_state[[i, j]] = self.rng.random_range(0..n_states) as u8 + 1;
                    continue;
                }
                for (s, w) in lw.iter_mut().enumerate() {
                    let mut v = if j == b {
                        dp.nu[s].ln()
                    } else {
                        dp.omega[self.st.z_state[[i, j - 1]] as usize - 1][s].ln()
                    };
                    if j + 1 < k {
                        v += dp.omega[s][self.st.z_state[[i, j + 1]] as usize - 1].ln();
                    }
                    if j <= d {
                        let x = Self::state_effect(s as u8 + 1);
                        v += self.surv_term(j, d, x) + self.cap_term(i, j, x);
                    }
                    *w = v;
                }
                if let Some(s) = sample_log_weights(&mut self.rng, &lw) {
                    self.st.z_state[[i, j]] = s as u8 + 1;
                }
            }
        }
    }

    // ---- parameters -------------------------------------------------------------

    fn build_tables(&self) -> (SurvivalTable, CaptureTable) {
        let k = self.pb.k1;
        let merge = self.pb.spec.covariate != CovariateKind::Mass;
        let mut surv = SurvivalTable::new(k - 1);
        let mut cap = CaptureTable::new(&self.pb.k2);
        for i in 0..self.pb.m {
            if !self.st.w[i] {
                continue;
            }
            let (b, d) = (self.st.b[i], self.st.d[i]);
            for j in b..=d {
                let x = self.effect(i, j);
                if j + 1 < k {
                    surv.push(j, x, j == d, merge);
                }
                if !self.pb.cfg.prior_only {
                    cap.push(j, x, |l| self.pb.y(i, j, l), merge);
                }
            }
        }
        (surv, cap)
    }

    fn update_parameters(&mut self) {
        let (surv, cap) = self.build_tables();
        self.update_psi_zeta();
        self.update_survival_block(&surv);
        self.update_capture_block(&cap);
        match self.pb.spec.covariate {
            CovariateKind::Mass => self.update_mass_process(),
            CovariateKind::Categorical => self.update_disease_process(),
            CovariateKind::None => {}
        }
    }

    fn update_psi_zeta(&mut self) {
        let pr = self.pb.priors;
        let k = self.pb.k1;
        let n_in = self.st.w.iter().filter(|&&w| w).count();
        let m = self.pb.m;
        self.st.params.birth.psi = draw_beta(&mut self.rng, pr.psi_a + n_in as f64, pr.psi_b + (m - n_in) as f64);
        let mut born = vec![0usize; k];
        for i in 0..m {
            if self.st.w[i] {
                born[self.st.b[i]] += 1;
            }
        }
        let mut later: usize = born.iter().sum();
        for j in 0..k - 1 {
            later -= born[j];
            self.st.params.birth.zeta[j] = draw_beta(&mut self.rng, pr.zeta_a + born[j] as f64, pr.zeta_b + later as f64);
        }
    }

    fn update_survival_block(&mut self, t: &SurvivalTable) {
        let tau = self.pb.priors.coef_sd;
        let upper = self.pb.priors.sd_upper;
        let target = self.pb.cfg.target_accept;
        let gain = self.gain;
        let rng = &mut self.rng;
        let sc = &mut self.sc;
        let lp = &mut self.st.params.link;
        let k = self.pb.k1;

        let (a1, es) = (lp.alpha1, lp.eta_s.clone());
        lp.alpha0 = rw_scalar(rng, &mut sc.alpha0, gain, target, lp.alpha0, |a| {
            t.ll_all(a, a1, &es) + normal_ln_pdf(a, 0.0, tau)
        });
        if self.pb.has_slope {
            let a0 = lp.alpha0;
            lp.alpha1 = rw_scalar(rng, &mut sc.alpha1, gain, target, lp.alpha1, |a| {
                t.ll_all(a0, a, &es) + normal_ln_pdf(a, 0.0, tau)
            });
        }
        for j in 0..k - 1 {
            let (a0, a1, sig) = (lp.alpha0, lp.alpha1, lp.sigma_s);
            lp.eta_s[j] = rw_scalar(rng, &mut sc.eta_s[j], gain, target, lp.eta_s[j], |e| {
                t.ll(j, a0, a1, e) + normal_ln_pdf(e, 0.0, sig)
            });
        }
        lp.sigma_s = rw_log_sigma(rng, &mut sc.sigma_s, gain, target, lp.sigma_s, upper, &lp.eta_s, 0.0);
        // joint rescaling of sigma_s and the survival effects
        let u = sc.rescale_s.s() * std_normal(rng);
        let new_sigma = lp.sigma_s * u.exp();
        let accepted = if new_sigma < upper {
            let scaled: Vec<f64> = lp.eta_s.iter().map(|e| e * u.exp()).collect();
            let lr = t.ll_all(lp.alpha0, lp.alpha1, &scaled) - t.ll_all(lp.alpha0, lp.alpha1, &lp.eta_s) + u;
            let acc = accept(rng, lr);
            if acc {
                lp.sigma_s = new_sigma;
                lp.eta_s = scaled;
            }
            acc
        } else {
            false
        };
        sc.rescale_s.record(accepted, gain, target);
        // translate the intercept against the effects
        let c = shift_draw(rng, lp.alpha0, tau, &lp.eta_s, lp.sigma_s);
        lp.alpha0 += c;
        lp.eta_s.iter_mut().for_each(|e| *e -= c);
    }

    fn update_capture_block(&mut self, t: &CaptureTable) {
        let tau = self.pb.priors.coef_sd;
        let upper = self.pb.priors.sd_upper;
        let target = self.pb.cfg.target_accept;
        let gain = self.gain;
        let robust = self.pb.robust;
        let k = self.pb.k1;
        let rng = &mut self.rng;
        let sc = &mut self.sc;
        let lp = &mut self.st.params.link;

        fn all(t: &CaptureTable, lp: &LinkParams, g0: f64, g1: f64, eta_p: &[f64], eps: &[Vec<f64>]) -> f64 {
            (0..eta_p.len())
                .map(|j| t.ll(j, g0 + eta_p[j], g1, if lp.has_eps() { Some(&eps[j][..]) } else { None }, None))
                .sum()
        }
        let eps_of = |lp: &LinkParams, j: usize| -> Option<Vec<f64>> { if lp.has_eps() { Some(lp.eps_p[j].clone()) } else { None } };

        {
            let snapshot = lp.clone();
            lp.gamma0 = rw_scalar(rng, &mut sc.gamma0, gain, target, lp.gamma0, |g| {
                all(t, &snapshot, g, snapshot.gamma1, &snapshot.eta_p, &snapshot.eps_p) + normal_ln_pdf(g, 0.0, tau)
            });
        }
        if self.pb.has_slope {
            let snapshot = lp.clone();
            lp.gamma1 = rw_scalar(rng, &mut sc.gamma1, gain, target, lp.gamma1, |g| {
                all(t, &snapshot, snapshot.gamma0, g, &snapshot.eta_p, &snapshot.eps_p) + normal_ln_pdf(g, 0.0, tau)
            });
        }
        for j in 0..k {
            let (g0, g1, sig) = (lp.gamma0, lp.gamma1, lp.sigma_p1);
            let eps = eps_of(lp, j);
            lp.eta_p[j] = rw_scalar(rng, &mut sc.eta_p[j], gain, target, lp.eta_p[j], |e| {
                t.ll(j, g0 + e, g1, eps.as_deref(), None) + normal_ln_pdf(e, 0.0, sig)
            });
        }
        if robust {
            for j in 0..k {
                for l in 0..lp.eps_p[j].len() {
                    let base = lp.gamma0 + lp.eta_p[j];
                    let (g1, sig) = (lp.gamma1, lp.sigma_p2);
                    let mut eps = lp.eps_p[j].clone();
                    let cur = eps[l];
                    let new = {
                        let f = |v: f64, eps: &mut Vec<f64>| {
                            eps[l] = v;
                            t.ll(j, base, g1, Some(eps), Some(l)) + normal_ln_pdf(v, 0.0, sig)
                        };
                        let step: f64 = StandardNormal.sample(rng);
                        let prop = cur + sc.eps_p[j][l].s() * step;
                        let lr = f(prop, &mut eps) - f(cur, &mut eps);
                        let acc = accept(rng, lr);
                        sc.eps_p[j][l].record(acc, gain, target);
                        if acc { prop } else { cur }
                    };
                    lp.eps_p[j][l] = new;
                }
            }
        }
        lp.sigma_p1 = rw_log_sigma(rng, &mut sc.sigma_p1, gain, target, lp.sigma_p1, upper, &lp.eta_p, 0.0);
        {
            let u = sc.rescale_p1.s() * std_normal(rng);
            let new_sigma = lp.sigma_p1 * u.exp();
            let accepted = if new_sigma < upper {
                let scaled: Vec<f64> = lp.eta_p.iter().map(|e| e * u.exp()).collect();
                let lr = all(t, lp, lp.gamma0, lp.gamma1, &scaled, &lp.eps_p)
                    - all(t, lp, lp.gamma0, lp.gamma1, &lp.eta_p, &lp.eps_p)
                    + u;
                let acc = accept(rng, lr);
                if acc {
                    lp.sigma_p1 = new_sigma;
                    lp.eta_p = scaled;
                }
                acc
            } else {
                false
            };
            sc.rescale_p1.record(accepted, gain, target);
        }
        if robust {
            let flat: Vec<f64> = lp.eps_p.iter().flatten().copied().collect();
            lp.sigma_p2 = rw_log_sigma(rng, &mut sc.sigma_p2, gain, target, lp.sigma_p2, upper, &flat, 0.0);
            let u = sc.rescale_p2.s() * std_normal(rng);
            let new_sigma = lp.sigma_p2 * u.exp();
            let accepted = if new_sigma < upper {
                let scaled: Vec<Vec<f64>> = lp.eps_p.iter().map(|r| r.iter().map(|e| e * u.exp()).collect()).collect();
                let lr = all(t, lp, lp.gamma0, lp.gamma1, &lp.eta_p, &scaled)
                    - all(t, lp, lp.gamma0, lp.gamma1, &lp.eta_p, &lp.eps_p)
                    + u;
                let acc = accept(rng, lr);
                if acc {
                    lp.sigma_p2 = new_sigma;
                    lp.eps_p = scaled;
                }
                acc
            } else {
                false
            };
            sc.rescale_p2.record(accepted, gain, target);
        }
        let c = shift_draw(rng, lp.gamma0, tau, &lp.eta_p, lp.sigma_p1);
        lp.gamma0 += c;
        lp.eta_p.iter_mut().for_each(|e| *e -= c);
        if robust {
            for j in 0..k {
                let c = shift_draw(rng, lp.eta_p[j], lp.sigma_p1, &lp.eps_p[j], lp.sigma_p2);
                lp.eta_p[j] += c;
                lp.eps_p[j].iter_mut().for_each(|e| *e -= c);
            }
        }
    }

    fn update_mass_process(&mut self) {
        let k = self.pb.k1;
        let tau = self.pb.priors.coef_sd;
        let upper = self.pb.priors.sd_upper;
        let target = self.pb.cfg.target_accept;
        let gain = self.gain;
        let mut mp = self.st.params.mass.clone().expect("mass params");

        let incl: Vec<usize> = (0..self.pb.m).filter(|&i| self.st.w[i]).collect();
        let n = incl.len() as f64;
        // mu | initial masses
        let sum_init: f64 = incl.iter().map(|&i| self.st.lambda[[i, self.st.b[i]]]).sum();
        let prec = 1.0 / sq(tau) + n / sq(mp.sigma_lambda1);
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mp.mu_lambda = sum_init / sq(mp.sigma_lambda1) / prec + z / prec.sqrt();
        // drifts | consecutive differences
        for j in 0..k - 1 {
            let sum_diff: f64 = incl.iter().map(|&i| self.st.lambda[[i, j + 1]] - self.st.lambda[[i, j]]).sum();
            let prec = 1.0 / sq(tau) + n / sq(mp.sigma_lambda2);
            let z: f64 = StandardNormal.sample(&mut self.rng);
            mp.delta[j] = sum_diff / sq(mp.sigma_lambda2) / prec + z / prec.sqrt();
        }
        let init_dev: Vec<f64> = incl.iter().map(|&i| self.st.lambda[[i, self.st.b[i]]] - mp.mu_lambda).collect();
        mp.sigma_lambda1 =
            rw_log_sigma(&mut self.rng, &mut self.sc.sigma_l1, gain, target, mp.sigma_lambda1, upper, &init_dev, 0.0);
        let mut step_dev = Vec::with_capacity(incl.len() * (k - 1));
        for &i in &incl {
            for j in 0..k - 1 {
                step_dev.push(self.st.lambda[[i, j + 1]] - self.st.lambda[[i, j]] - mp.delta[j]);
            }
        }
        mp.sigma_lambda2 =
            rw_log_sigma(&mut self.rng, &mut self.sc.sigma_l2, gain, target, mp.sigma_lambda2, upper, &step_dev, 0.0);

        // observation sd
        let cur = mp.sigma_z;
        let step: f64 = StandardNormal.sample(&mut self.rng);
        let prop = cur * (self.sc.sigma_z.s() * step).exp();
        let accepted = if prop < upper {
            let lr = self.sigma_z_ll(prop) - self.sigma_z_ll(cur) + (prop / cur).ln();
            accept(&mut self.rng, lr)
        } else {
            false
        };
        if accepted {
            mp.sigma_z = prop;
        }
        self.sc.sigma_z.record(accepted, gain, target);
        self.st.params.mass = Some(mp);
    }

    fn sigma_z_ll(&self, sigma_z: f64) -> f64 {
        if self.pb.cfg.prior_only {
            return 0.0;
        }
        let mut s = 0.0;
        for (r, rec) in self.pb.records.iter().enumerate() {
            let lam = self.st.lambda[[rec.i, rec.j]];
            s += if self.pb.spec.mass_censoring {
                normal_ln_pdf(self.st.z_mass[r], lam, sigma_z) - std_normal_ln_cdf(lam / sigma_z)
            } else {
                normal_ln_pdf(rec.z_obs, lam, sigma_z)
            };
        }
        s
    }

    fn update_disease_process(&mut self) {
        let k = self.pb.k1;
        let s = self.pb.n_states;
        let a = self.pb.priors.dirichlet;
        let mut first = vec![a; s];
        let mut trans = vec![vec![a; s]; s];
        for i in 0..self.pb.m {
            if !self.st.w[i] {
                continue;
            }
            let b = self.st.b[i];
            first[self.st.z_state[[i, b]] as usize - 1] += 1.0;
            for j in b + 1..k {
                let h = self.st.z_state[[i, j - 1]] as usize - 1;
                let l = self.st.z_state[[i, j]] as usize - 1;
                trans[h][l] += 1.0;
            }
        }
        let nu = draw_dirichlet(&mut self.rng, &first);
        let omega = trans.iter().map(|row| draw_dirichlet(&mut self.rng, row)).collect();
        self.st.params.disease = Some(DiseaseProcessParams { nu, omega });
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// One random-walk Metropolis step on a scalar with log target `f`.
fn rw_scalar<R: Rng + ?Sized>(
    rng: &mut R,
    rw: &mut Rw,
    gain: Option<f64>,
    target: f64,
    cur: f64,
    f: impl Fn(f64) -> f64,
) -> f64 {
    let step: f64 = StandardNormal.sample(rng);
    let prop = cur + rw.s() * step;
    let acc = accept(rng, f(prop) - f(cur));
    rw.record(acc, gain, target);
    if acc {
        prop
    } else {
        cur
    }
}

/// Random walk on `ln sigma` for the sd of zero-mean... deviations `dev`
/// (already centred), under a Uniform(0, upper) prior on sigma.
fn rw_log_sigma<R: Rng + ?Sized>(
    rng: &mut R,
    rw: &mut Rw,
    gain: Option<f64>,
    target: f64,
    cur: f64,
    upper: f64,
    dev: &[f64],
    centre: f64,
) -> f64 {
    let ss: f64 = dev.iter().map(|e| sq(e - centre)).sum();
    let n = dev.len() as f64;
    let lp = |s: f64| -n * s.ln() - ss / (2.0 * s * s) + s.ln();
    let step: f64 = StandardNormal.sample(rng);
    let prop = cur * (rw.s() * step).exp();
    let acc = prop < upper && accept(rng, lp(prop) - lp(cur));
    rw.record(acc, gain, target);
    if acc {
        prop
    } else {
        cur
    }
}

/// Exact draw of the translation `c` in `(a + c, e - c)` under priors
/// `a ~ N(0, tau)` and `e_k ~ N(0, sigma)`; the likelihood depends only on
/// `a + e_k`.
fn shift_draw<R: Rng + ?Sized>(rng: &mut R, a: f64, tau: f64, e: &[f64], sigma: f64) -> f64 {
    let prec = 1.0 / sq(tau) + e.len() as f64 / sq(sigma);
    let mean = (-a / sq(tau) + e.iter().sum::<f64>() / sq(sigma)) / prec;
    let z: f64 = StandardNormal.sample(rng);
    mean + z / prec.sqrt()
}

// ---- initial values -------------------------------------------------------------

pub(crate) fn initial_state(pb: &Problem<'_>, data: &CaptureData, rng: &mut ChaCha8Rng) -> Result<ChainState> {
    let k = pb.k1;
    let m = pb.m;
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut link = LinkParams::zeros(&pb.k2, pb.robust);
    link.alpha0 = 0.5 + u(-1.0, 1.0);
    link.gamma0 = -0.5 + u(-1.0, 1.0);
    if pb.has_slope {
        link.alpha1 = u(-1.0, 1.0);
        link.gamma1 = u(-1.0, 1.0);
    }
    link.sigma_s = u(0.3, 1.5);
    link.sigma_p1 = u(0.3, 1.5);
    link.sigma_p2 = u(0.3, 1.5);
    let zeta: Vec<f64> = (0..k).map(|j| 1.0 / (k - j) as f64).collect();
    let psi = u(0.3, 0.8);
    let mass = if pb.mass_on() {
        let obs: Vec<f64> = data.masses.iter().map(|o| o.z_obs).collect();
        let (mu, sd) = if obs.len() >= 2 {
            let mu = obs.iter().sum::<f64>() / obs.len() as f64;
            let var = obs.iter().map(|z| sq(z - mu)).sum::<f64>() / (obs.len() - 1) as f64;
            (mu, var.sqrt())
        } else {
            (pb.std.loc, pb.std.scale)
        };
        let upper = pb.priors.sd_upper;
        Some(MassProcessParams {
            mu_lambda: mu + u(-1.0, 1.0),
            sigma_lambda1: sd.clamp(0.1 * upper, 0.9 * upper) * u(0.8, 1.0),
            delta: vec![0.0; k - 1],
            sigma_lambda2: u(0.5, 2.0).min(0.9 * upper),
            sigma_z: u(0.5, 2.0).min(0.9 * upper),
        })
    } else {
        None
    };
    let disease = if pb.disease_on() {
        let s = pb.n_states;
        let stay = u(0.6, 0.9);
        let omega = (0..s)
            .map(|h| (0..s).map(|l| if h == l { stay } else { (1.0 - stay) / (s - 1) as f64 }).collect())
            .collect();
        Some(DiseaseProcessParams { nu: vec![1.0 / s as f64; s], omega })
    } else {
        None
    };
    let params = ModelParams { birth: BirthParams { zeta, psi }, link, mass, disease };

    let mut st = ChainState {
        params,
        w: vec![false; m],
        b: vec![0; m],
        d: vec![k - 1; m],
        lambda: if pb.mass_on() { Array2::zeros((m, k)) } else { Array2::zeros((0, 0)) },
        z_mass: pb.records.iter().map(|r| if r.z_obs > r.lo && r.z_obs < r.hi { r.z_obs } else { 0.5 * (r.lo + r.hi.min(r.lo + 1.0)) }).collect(),
        z_state: if pb.disease_on() { Array2::from_elem((m, k), 1) } else { Array2::zeros((0, 0)) },
    };
    for i in 0..pb.n_obs {
        st.w[i] = true;
        st.b[i] = pb.first_cap[i].expect("observed");
        st.d[i] = k - 1;
        if pb.mass_on() {
            // per-period mean of recorded masses, carried to the nearest period
            let mut per: Vec<Option<f64>> = vec![None; k];
            for (j, slot) in per.iter_mut().enumerate() {
                let recs = pb.records_at(i, j);
                if !recs.is_empty() {
                    *slot = Some(recs.iter().map(|r| r.z_obs).sum::<f64>() / recs.len() as f64);
                }
            }
            let fallback = st.params.mass.as_ref().unwrap().mu_lambda;
            for j in 0..k {
                st.lambda[[i, j]] = nearest(&per, j).unwrap_or(fallback);
            }
        }
        if pb.disease_on() {
            let per: Vec<Option<u8>> = (0..k).map(|j| Some(pb.obs_state[[i, j]]).filter(|&s| s != 0)).collect();
            for j in 0..k {
                st.z_state[[i, j]] = nearest(&per, j).unwrap_or(1);
            }
        }
    }
    let mut chain_rng = rng.clone();
    {
        let mut ch = Chain::new(pb, st, chain_rng.clone());
        for i in pb.n_obs..m {
            ch.refresh_ghost(i);
            ch.st.w[i] = ch.rng.random::<f64>() < psi;
        }
        chain_rng = ch.rng.clone();
        st = ch.st;
    }
    *rng = chain_rng;
    Ok(st)
}

fn nearest<T: Copy>(per: &[Option<T>], j: usize) -> Option<T> {
    (0..per.len()).filter_map(|h| per[h].map(|v| (h.abs_diff(j), v))).min_by_key(|&(dist, _)| dist).map(|(_, v)| v)
}

// ---- log target (independent evaluation) ---------------------------------------

/// Log posterior of the included part of the state, assembled from the
/// likelihood and covariate evaluators. `w = 0` trajectories do not enter.
pub(crate) fn log_target(pb: &Problem<'_>, st: &ChainState, with_priors: bool) -> Result<Vec<(&'static str, f64)>> {
    let k = pb.k1;
    let m = pb.m;
    let aug = st.augmented(k)?;
    let first_alive: Vec<Option<usize>> = (0..m).map(|i| if st.w[i] { Some(st.b[i]) } else { None }).collect();
    let effect = match pb.spec.covariate {
        CovariateKind::None => Array2::zeros((m, k)),
        CovariateKind::Mass => covariate_effect(CovariateView::Mass { lambda: &st.lambda, standardization: pb.std }),
        CovariateKind::Categorical => covariate_effect(CovariateView::Disease { z: &st.z_state }),
    };
    let probs = link_probabilities(&st.params.link, &effect, &pb.k2)?;
    let psi = st.params.birth.psi;
    let mut out = vec![
        ("inclusion", st.w.iter().map(|&w| if w { psi.ln() } else { (1.0 - psi).ln() }).sum()),
        ("birth", log_birth(&aug.a_b, &st.w, &st.params.birth.zeta)?),
        ("mortality", log_mortality(&aug.a_d, &aug.a_b, &st.w, &probs.survival)?),
    ];
    if !pb.cfg.prior_only {
        let width = pb.k2.iter().copied().max().unwrap_or(1);
        let mut x3 = Array3::<u8>::zeros((m, k, width));
        for i in 0..pb.n_obs {
            for j in 0..k {
                for l in 0..pb.k2[j] {
                    x3[[i, j, l]] = u8::from(pb.y(i, j, l));
                }
            }
        }
        out.push(("capture", log_capture_robust(&x3, &pb.k2, &aug.a_b, &aug.a_d, &st.w, &probs.capture)?));
    }
    match pb.spec.covariate {
        CovariateKind::Mass => {
            let mp = st.params.mass.as_ref().expect("mass params");
            let mut pre = 0.0;
            for i in (0..m).filter(|&i| st.w[i]) {
                for j in 0..st.b[i] {
                    pre += normal_ln_pdf(st.lambda[[i, j]], st.lambda[[i, j + 1]] - mp.delta[j], mp.sigma_lambda2);
                }
            }
            out.push(("mass_walk", log_mass_walk(&st.lambda, mp, &first_alive)? + pre));
            if !pb.cfg.prior_only {
                let obs = if pb.spec.mass_censoring {
                    log_mass_obs(&pb.records, &st.z_mass, &st.lambda, mp.sigma_z)?
                } else {
                    pb.records.iter().map(|r| normal_ln_pdf(r.z_obs, st.lambda[[r.i, r.j]], mp.sigma_z)).sum()
                };
                out.push(("mass_obs", obs));
            }
        }
        CovariateKind::Categorical => {
            let dp = st.params.disease.as_ref().expect("disease params");
            let pre: f64 = (0..m).filter(|&i| st.w[i]).map(|i| st.b[i] as f64).sum::<f64>() * (pb.n_states as f64).ln();
            out.push(("states", log_disease_process(&st.z_state, dp, &first_alive, &st.w)? - pre));
        }
        CovariateKind::None => {}
    }
    if with_priors {
        let pr = pb.priors;
        let lp = &st.params.link;
        let sd_ok = |s: f64| if s > 0.0 && s < pr.sd_upper { -(pr.sd_upper.ln()) } else { f64::NEG_INFINITY };
        let mut v = normal_ln_pdf(lp.alpha0, 0.0, pr.coef_sd) + normal_ln_pdf(lp.gamma0, 0.0, pr.coef_sd);
        if pb.has_slope {
            v += normal_ln_pdf(lp.alpha1, 0.0, pr.coef_sd) + normal_ln_pdf(lp.gamma1, 0.0, pr.coef_sd);
        }
        v += lp.eta_s.iter().map(|e| normal_ln_pdf(*e, 0.0, lp.sigma_s)).sum::<f64>();
        v += lp.eta_p.iter().map(|e| normal_ln_pdf(*e, 0.0, lp.sigma_p1)).sum::<f64>();
        v += sd_ok(lp.sigma_s) + sd_ok(lp.sigma_p1);
        if pb.robust {
            v += lp.eps_p.iter().flatten().map(|e| normal_ln_pdf(*e, 0.0, lp.sigma_p2)).sum::<f64>();
            v += sd_ok(lp.sigma_p2);
        }
        if let Some(mp) = st.params.mass.as_ref() {
            v += normal_ln_pdf(mp.mu_lambda, 0.0, pr.coef_sd);
            v += mp.delta.iter().map(|d| normal_ln_pdf(*d, 0.0, pr.coef_sd)).sum::<f64>();
            v += sd_ok(mp.sigma_lambda1) + sd_ok(mp.sigma_lambda2) + sd_ok(mp.sigma_z);
        }
        out.push(("priors", v));
    }
    Ok(out)
}

// ---- recorded quantities ----------------------------------------------------------

/// Column names of a draw row, in order.
pub(crate) fn draw_columns(pb: &Problem<'_>) -> Vec<String> {
    let k = pb.k1;
    let mut c = vec!["psi".to_string()];
    c.extend((1..k).map(|j| format!("zeta.{j}")));
    c.push("alpha0".into());
    if pb.has_slope {
        c.push("alpha1".into());
    }
    c.push("gamma0".into());
    if pb.has_slope {
        c.push("gamma1".into());
    }
    c.push("sigma_s".into());
    c.push("sigma_p1".into());
    if pb.robust {
        c.push("sigma_p2".into());
    }
    c.extend((1..k).map(|j| format!("eta_s.{j}")));
    c.extend((1..=k).map(|j| format!("eta_p.{j}")));
    if pb.robust {
        for j in 0..k {
            c.extend((1..=pb.k2[j]).map(|l| format!("eps_p.{}.{l}", j + 1)));
        }
    }
    match pb.spec.covariate {
        CovariateKind::Mass => {
            c.extend(["mu_lambda", "sigma_lambda1", "sigma_lambda2", "sigma_z"].map(String::from));
            c.extend((1..k).map(|j| format!("delta.{j}")));
        }
        CovariateKind::Categorical => {
            let s = pb.n_states;
            c.extend((1..=s).map(|h| format!("nu.{h}")));
            for h in 1..=s {
                c.extend((1..=s).map(|l| format!("omega.{h}.{l}")));
            }
        }
        CovariateKind::None => {}
    }
    c.push("N_total".into());
    c.extend((1..=k).map(|j| format!("N.{j}")));
    if pb.disease_on() {
        for s in 1..=pb.n_states {
            c.extend((1..=k).map(|j| format!("N_state.{s}.{j}")));
        }
    }
    c.push("mean_lifetime".into());
    c.extend((1..=k).map(|j| format!("beta.{j}")));
    c.extend((1..k).map(|j| format!("birth_rate.{j}")));
    c
}

impl<'p, 'a> Chain<'p, 'a> {
    pub fn draw_row(&self) -> Result<Vec<f64>> {
        let pb = self.pb;
        let st = &self.st;
        let p = &st.params;
        let k = pb.k1;
        let mut r = vec![p.birth.psi];
        r.extend_from_slice(&p.birth.zeta[..k - 1]);
        r.push(p.link.alpha0);
        if pb.has_slope {
            r.push(p.link.alpha1);
        }
        r.push(p.link.gamma0);
        if pb.has_slope {
            r.push(p.link.gamma1);
        }
        r.push(p.link.sigma_s);
        r.push(p.link.sigma_p1);
        if pb.robust {
            r.push(p.link.sigma_p2);
        }
        r.extend_from_slice(&p.link.eta_s);
        r.extend_from_slice(&p.link.eta_p);
        if pb.robust {
            r.extend(p.link.eps_p.iter().flatten());
        }
        if let Some(mp) = p.mass.as_ref() {
            r.extend([mp.mu_lambda, mp.sigma_lambda1, mp.sigma_lambda2, mp.sigma_z]);
            r.extend_from_slice(&mp.delta);
        }
        if let Some(dp) = p.disease.as_ref() {
            r.extend_from_slice(&dp.nu);
            r.extend(dp.omega.iter().flatten());
        }
        let (n_total, n_by, life_sum) = self.abundance();
        r.push(n_total as f64);
        r.extend(n_by.iter().map(|&v| v as f64));
        if pb.disease_on() {
            let s = pb.n_states;
            let mut by_state = vec![vec![0usize; k]; s];
            for i in (0..pb.m).filter(|&i| st.w[i]) {
                for j in st.b[i]..=st.d[i] {
                    by_state[st.z_state[[i, j]] as usize - 1][j] += 1;
                }
            }
            r.extend(by_state.iter().flatten().map(|&v| v as f64));
        }
        r.push(if n_total > 0 { life_sum as f64 / n_total as f64 } else { f64::NAN });
        let beta = zeta_to_beta(&p.birth.zeta)?;
        let eta = beta_to_eta(&beta, n_total, &n_by);
        r.extend_from_slice(&beta);
        r.extend(eta.iter().map(|e| e.unwrap_or(f64::NAN)));
        Ok(r)
    }

    fn abundance(&self) -> (usize, Vec<usize>, usize) {
        let st = &self.st;
        let mut n_by = vec![0usize; self.pb.k1];
        let mut n_total = 0;
        let mut life = 0;
        for i in (0..self.pb.m).filter(|&i| st.w[i]) {
            n_total += 1;
            life += st.d[i] - st.b[i] + 1;
            for v in &mut n_by[st.b[i]..=st.d[i]] {
                *v += 1;
            }
        }
        (n_total, n_by, life)
    }

    /// Structural identities that every recorded state must satisfy; returns
    /// a description of each violation.
    pub fn invariant_violations(&self) -> Vec<String> {
        let pb = self.pb;
        let st = &self.st;
        let mut out = Vec::new();
        let aug = match st.augmented(pb.k1) {
            Ok(a) => a,
            Err(e) => return vec![format!("interval encoding: {e}")],
        };
        if let Err(e) = aug.check_structure() {
            out.push(format!("structure: {e}"));
        }
        let periods: Vec<Vec<usize>> = (0..pb.n_obs).map(|i| pb.captured_periods(i)).collect();
        if let Err(e) = aug.check_observed(&periods) {
            out.push(format!("observed: {e}"));
        }
        let (_, n_by, _) = self.abundance();
        match derive_abundance(&aug) {
            Ok(n) if n == n_by => {}
            Ok(n) => out.push(format!("abundance mismatch {n:?} vs {n_by:?}")),
            Err(e) => out.push(format!("abundance: {e}")),
        }
        match zeta_to_beta(&st.params.birth.zeta) {
            Ok(beta) => {
                let s: f64 = beta.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    out.push(format!("beta sums to {s}"));
                }
            }
            Err(e) => out.push(format!("beta: {e}")),
        }
        for (i, p) in periods.iter().enumerate() {
            let span = p.last().unwrap() - p.first().unwrap() + 1;
            if st.d[i] - st.b[i] + 1 < span {
                out.push(format!("lifetime of individual {i} shorter than its capture span"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IngestOptions;
    use approx::assert_relative_eq;
    use std::path::PathBuf;

    fn small_data(cov: CovariateKind) -> CaptureData {
        let text = match cov {
            CovariateKind::Mass => {
                "id,primary,secondary,captured,covariate,flag\n\
                 a,1,1,1,30,\na,1,2,1,31,\na,3,2,1,35,\nb,2,1,1,60,censored\nc,2,2,1,,absent\nc,4,1,1,41,\n"
            }
            CovariateKind::Categorical => {
                "id,primary,secondary,captured,covariate,flag\n\
                 a,1,1,1,1,\na,3,1,1,,unknown\nb,2,1,1,2,\nc,2,1,1,1,\nc,4,1,1,2,\n"
            }
            CovariateKind::None => "id,primary,secondary,captured,covariate,flag\na,1,1,1,,\na,3,1,1,,\nb,2,1,1,,\n",
        };
        let opts = IngestOptions {
            covariate: cov,
            k1: Some(4),
            k2: Some(if cov == CovariateKind::Mass { vec![2; 4] } else { vec![1; 4] }),
            ..Default::default()
        };
        crate::data::ingest_from_reader(text.as_bytes(), &PathBuf::from("t.csv"), &opts).unwrap()
    }

    fn spec(cov: CovariateKind) -> ModelSpec {
        ModelSpec {
            robust: cov == CovariateKind::Mass,
            covariate: cov,
            m: 7,
            n_states: 2,
            mass_censoring: true,
            standardization: Some(Standardization { loc: 40.0, scale: 8.0 }),
        }
    }

    fn total(pb: &Problem<'_>, st: &ChainState) -> f64 {
        log_target(pb, st, true).unwrap().iter().map(|(_, v)| v).sum()
    }

    /// Scramble a chain into a generic state by running a few sweeps.
    fn warm_chain<'p, 'a>(pb: &'p Problem<'a>, data: &CaptureData, seed: u64) -> Chain<'p, 'a> {
        let mut rng = Chain::rng_for(seed, 0);
        let st = initial_state(pb, data, &mut rng).unwrap();
        let mut ch = Chain::new(pb, st, rng);
        for _ in 0..25 {
            ch.sweep().unwrap();
        }
        ch
    }

    #[test]
    fn birth_and_death_weights_match_log_target() {
        for cov in [CovariateKind::None, CovariateKind::Mass, CovariateKind::Categorical] {
            let data = small_data(cov);
            let sp = spec(cov);
            let pr = Priors::default();
            let cfg = SamplerConfig::default();
            let pb = Problem::new(&sp, &pr, &cfg, &data).unwrap();
            for seed in 0..4 {
                let mut ch = warm_chain(&pb, &data, seed);
                for i in 0..pb.m {
                    if !ch.st.w[i] {
                        continue;
                    }
                    ch.fill_terms(i);
                    let hi = ch.birth_weights(i);
                    let wts = ch.wts.clone();
                    let mut base = ch.st.clone();
                    let mut ref_lp = Vec::new();
                    for b in 0..=hi {
                        base.b[i] = b;
                        ref_lp.push(total(&pb, &base));
                    }
                    for b in 0..=hi {
                        assert_relative_eq!(wts[b] - wts[0], ref_lp[b] - ref_lp[0], epsilon = 1e-8);
                    }
                    let lo = ch.death_weights(i);
                    let wts = ch.wts.clone();
                    let mut base = ch.st.clone();
                    let ref_lp: Vec<f64> = (lo..pb.k1)
                        .map(|d| {
                            base.d[i] = d;
                            total(&pb, &base)
                        })
                        .collect();
                    for o in 0..wts.len() {
                        assert_relative_eq!(wts[o] - wts[0], ref_lp[o] - ref_lp[0], epsilon = 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn lambda_local_density_matches_log_target() {
        let data = small_data(CovariateKind::Mass);
        let sp = spec(CovariateKind::Mass);
        let pr = Priors::default();
        let cfg = SamplerConfig::default();
        let pb = Problem::new(&sp, &pr, &cfg, &data).unwrap();
        let ch = warm_chain(&pb, &data, 3);
        let mp = ch.st.params.mass.clone().unwrap();
        for i in (0..pb.m).filter(|&i| ch.st.w[i]) {
            for j in ch.st.b[i]..=ch.st.d[i] {
                let v0 = ch.st.lambda[[i, j]];
                let v1 = v0 + 0.7;
                let mut alt = ch.st.clone();
                alt.lambda[[i, j]] = v1;
                let expected = total(&pb, &alt) - total(&pb, &ch.st);
                let got = ch.lambda_local(i, j, v1, &mp) - ch.lambda_local(i, j, v0, &mp);
                assert_relative_eq!(got, expected, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn table_likelihoods_match_log_target() {
        for cov in [CovariateKind::Mass, CovariateKind::Categorical] {
            let data = small_data(cov);
            let sp = spec(cov);
            let pr = Priors::default();
            let cfg = SamplerConfig::default();
            let pb = Problem::new(&sp, &pr, &cfg, &data).unwrap();
            let ch = warm_chain(&pb, &data, 9);
            let (surv, cap) = ch.build_tables();
            let lp = ch.st.params.link.clone();
            let mut alt = ch.st.clone();
            alt.params.link.alpha1 += 0.4;
            alt.params.link.gamma0 -= 0.3;
            let expected = total(&pb, &alt) - total(&pb, &ch.st);
            let cap_ll = |g0: f64| -> f64 {
                (0..pb.k1)
                    .map(|j| cap.ll(j, g0 + lp.eta_p[j], lp.gamma1, if lp.has_eps() { Some(&lp.eps_p[j][..]) } else { None }, None))
                    .sum()
            };
            let got = surv.ll_all(lp.alpha0, lp.alpha1 + 0.4, &lp.eta_s) - surv.ll_all(lp.alpha0, lp.alpha1, &lp.eta_s)
                + cap_ll(lp.gamma0 - 0.3)
                - cap_ll(lp.gamma0)
                + normal_ln_pdf(lp.alpha1 + 0.4, 0.0, 10.0)
                - normal_ln_pdf(lp.alpha1, 0.0, 10.0)
                + normal_ln_pdf(lp.gamma0 - 0.3, 0.0, 10.0)
                - normal_ln_pdf(lp.gamma0, 0.0, 10.0);
            assert_relative_eq!(got, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn state_full_conditional_matches_log_target() {
        let data = small_data(CovariateKind::Categorical);
        let sp = spec(CovariateKind::Categorical);
        let pr = Priors::default();
        let cfg = SamplerConfig::default();
        let pb = Problem::new(&sp, &pr, &cfg, &data).unwrap();
        let ch = warm_chain(&pb, &data, 5);
        let dp = ch.st.params.disease.clone().unwrap();
        for i in (0..pb.m).filter(|&i| ch.st.w[i]) {
            let (b, d) = (ch.st.b[i], ch.st.d[i]);
            for j in b..pb.k1 {
                if pb.obs_state[[i, j]] != 0 {
                    continue;
                }
                let lw: Vec<f64> = (0..2)
                    .map(|s| {
                        let mut v = if j == b { dp.nu[s].ln() } else { dp.omega[ch.st.z_state[[i, j - 1]] as usize - 1][s].ln() };
                        if j + 1 < pb.k1 {
                            v += dp.omega[s][ch.st.z_state[[i, j + 1]] as usize - 1].ln();
                        }
                        if j <= d {
                            let x = Chain::state_effect(s as u8 + 1);
                            v += ch.surv_term(j, d, x) + ch.cap_term(i, j, x);
                        }
                        v
                    })
                    .collect();
                let mut a = ch.st.clone();
                a.z_state[[i, j]] = 1;
                let mut c = ch.st.clone();
                c.z_state[[i, j]] = 2;
                assert_relative_eq!(lw[1] - lw[0], total(&pb, &c) - total(&pb, &a), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn inclusion_probability_two_term_bayes() {
        // psi = 0.5 and Pr(no capture) = 0.25 give Pr(w = 1) = 0.2
        let data = CaptureData::empty(vec![1, 1], CovariateKind::None);
        let sp = ModelSpec { robust: false, covariate: CovariateKind::None, m: 1, n_states: 2, mass_censoring: true, standardization: None };
        let pr = Priors::default();
        let cfg = SamplerConfig::default();
        let pb = Problem::new(&sp, &pr, &cfg, &data).unwrap();
        let mut rng = Chain::rng_for(4, 0);
        let mut st = initial_state(&pb, &data, &mut rng).unwrap();
        st.params.birth.psi = 0.5;
        st.params.birth.zeta = vec![1.0, 1.0];
        st.params.link.eta_p = vec![0.0, 0.0];
        st.params.link.gamma0 = 0.0; // p = 0.5 per period
        st.params.link.eta_s = vec![50.0]; // S = 1
        st.params.link.alpha0 = 0.0;
        let mut ch = Chain::new(&pb, st, rng);
        let n = 40_000;
        let mut hits = 0;
        for _ in 0..n {
            ch.st.w[0] = false;
            ch.update_inclusion();
            hits += usize::from(ch.st.w[0]);
        }
        let f = hits as f64 / n as f64;
        assert!((f - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / n as f64).sqrt(), "{f}");
    }

    #[test]
    fn shift_draw_is_gaussian_conditional() {
        let mut rng = Chain::rng_for(1, 0);
        let (a, tau, e, sigma) = (0.4, 2.0, [0.3, -0.2, 0.5], 0.7);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| shift_draw(&mut rng, a, tau, &e, sigma)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|c| sq(c - mean)).sum::<f64>() / n as f64;
        let prec = 1.0 / 4.0 + 3.0 / 0.49;
        let expect = (-a / 4.0 + 0.6 / 0.49) / prec;
        assert!((mean - expect).abs() < 0.01, "{mean} vs {expect}");
        assert!((var - 1.0 / prec).abs() < 0.005);
    }
}
