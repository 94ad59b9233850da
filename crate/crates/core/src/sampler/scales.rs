use std::collections::BTreeMap;

use ndarray::Array2;

use super::config::SamplerConfig;

/// Random-walk proposal scale with acceptance bookkeeping.
#[derive(Debug, Clone)]
pub(crate) struct Rw {
    log_s: f64,
    n_prop: u64,
    n_acc: u64,
}

impl Rw {
    pub fn new(s: f64) -> Self {
        Rw { log_s: s.ln(), n_prop: 0, n_acc: 0 }
    }

    #[inline]
    pub fn s(&self) -> f64 {
        self.log_s.exp()
    }

    /// Record an outcome; `gain` is `Some(c / t^0.6)` during adaptation.
    #[inline]
    pub fn record(&mut self, accepted: bool, gain: Option<f64>, target: f64) {
        self.n_prop += 1;
        self.n_acc += u64::from(accepted);
        if let Some(g) = gain {
            let a = if accepted { 1.0 } else { 0.0 };
            self.log_s = (self.log_s + g * (a - target)).clamp(-12.0, 6.0);
        }
    }

    pub fn reset_counts(&mut self) {
        self.n_prop = 0;
        self.n_acc = 0;
    }

    fn counts(&self) -> (u64, u64) {
        (self.n_acc, self.n_prop)
    }
}

/// All proposal scales of one chain.
#[derive(Debug, Clone)]
pub(crate) struct Scales {
    pub alpha0: Rw,
    pub alpha1: Rw,
    pub gamma0: Rw,
    pub gamma1: Rw,
    pub eta_s: Vec<Rw>,
    pub eta_p: Vec<Rw>,
    pub eps_p: Vec<Vec<Rw>>,
    pub sigma_s: Rw,
    pub sigma_p1: Rw,
    pub sigma_p2: Rw,
    pub rescale_s: Rw,
    pub rescale_p1: Rw,
    pub rescale_p2: Rw,
    pub sigma_l1: Rw,
    pub sigma_l2: Rw,
    pub sigma_z: Rw,
    pub lambda: Array2<Rw>,
}

impl Scales {
    pub fn new(cfg: &SamplerConfig, k2: &[usize], m: usize, with_mass: bool) -> Self {
        let k1 = k2.len();
        let rw = |b: &str| Rw::new(cfg.initial_scale(b));
        Scales {
            alpha0: rw("alpha0"),
            alpha1: rw("alpha1"),
            gamma0: rw("gamma0"),
            gamma1: rw("gamma1"),
            eta_s: vec![rw("eta_s"); k1 - 1],
            eta_p: vec![rw("eta_p"); k1],
            eps_p: k2.iter().map(|&n| vec![rw("eps_p"); n]).collect(),
            sigma_s: rw("log_sigma"),
            sigma_p1: rw("log_sigma"),
            sigma_p2: rw("log_sigma"),
            rescale_s: rw("rescale"),
            rescale_p1: rw("rescale"),
            rescale_p2: rw("rescale"),
            sigma_l1: rw("log_sigma"),
            sigma_l2: rw("log_sigma"),
            sigma_z: rw("log_sigma"),
            lambda: Array2::from_elem(if with_mass { (m, k1) } else { (0, 0) }, rw("lambda")),
        }
    }

    pub fn reset_counts(&mut self) {
        for r in self.all_mut() {
            r.reset_counts();
        }
    }

    fn all_mut(&mut self) -> Vec<&mut Rw> {
        let mut v: Vec<&mut Rw> = vec![
            &mut self.alpha0,
            &mut self.alpha1,
            &mut self.gamma0,
            &mut self.gamma1,
            &mut self.sigma_s,
            &mut self.sigma_p1,
            &mut self.sigma_p2,
            &mut self.rescale_s,
            &mut self.rescale_p1,
            &mut self.rescale_p2,
            &mut self.sigma_l1,
            &mut self.sigma_l2,
            &mut self.sigma_z,
        ];
        v.extend(self.eta_s.iter_mut());
        v.extend(self.eta_p.iter_mut());
        v.extend(self.eps_p.iter_mut().flatten());
        v.extend(self.lambda.iter_mut());
        v
    }

    /// Acceptance rate per block, pooled over indexed members. Blocks that
    /// made no proposals are omitted.
    pub fn acceptance(&self) -> BTreeMap<String, f64> {
        let mut pooled: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
        let mut add = |name: &'static str, r: &Rw| {
            let (a, n) = r.counts();
            let e = pooled.entry(name).or_default();
            e.0 += a;
            e.1 += n;
        };
        add("alpha0", &self.alpha0);
        add("alpha1", &self.alpha1);
        add("gamma0", &self.gamma0);
        add("gamma1", &self.gamma1);
        add("sigma_s", &self.sigma_s);
        add("sigma_p1", &self.sigma_p1);
        add("sigma_p2", &self.sigma_p2);
        add("rescale_s", &self.rescale_s);
        add("rescale_p1", &self.rescale_p1);
        add("rescale_p2", &self.rescale_p2);
        add("sigma_lambda1", &self.sigma_l1);
        add("sigma_lambda2", &self.sigma_l2);
        add("sigma_z", &self.sigma_z);
        self.eta_s.iter().for_each(|r| add("eta_s", r));
        self.eta_p.iter().for_each(|r| add("eta_p", r));
        self.eps_p.iter().flatten().for_each(|r| add("eps_p", r));
        self.lambda.iter().for_each(|r| add("lambda", r));
        pooled
            .into_iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(k, (a, n))| (k.to_string(), a as f64 / n as f64))
            .collect()
    }
}
