//! Metropolis-within-Gibbs sampler over the augmented population.

mod chain;
mod config;
mod scales;
mod tables;

use std::collections::BTreeMap;

pub use chain::ChainState;
pub use config::{SamplerConfig, SCALE_BLOCKS};

use chain::{draw_columns, initial_state, log_target, Chain, Problem};

use crate::data::CaptureData;
use crate::draws::DrawSet;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Priors};

/// Per-chain bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInfo {
    /// Acceptance rates of the Metropolis blocks after adaptation.
    pub acceptance: BTreeMap<String, f64>,
    /// Recorded draws that failed a structural check.
    pub invariant_violations: usize,
    pub first_violation: Option<String>,
    pub final_state: ChainState,
}

/// Draws from all chains plus per-chain bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: DrawSet,
    pub chains: Vec<ChainInfo>,
}

impl PosteriorDraws {
    pub fn invariant_violations(&self) -> usize {
        self.chains.iter().map(|c| c.invariant_violations).sum()
    }
}

/// Run all chains from dispersed starting values.
pub fn run(cfg: &SamplerConfig, spec: &ModelSpec, priors: &Priors, data: &CaptureData) -> Result<PosteriorDraws> {
    run_with_inits(cfg, spec, priors, data, None)
}

/// Run all chains; `inits` supplies starting states (cycled over chains)
/// instead of the default starting rules.
pub fn run_with_inits(
    cfg: &SamplerConfig,
    spec: &ModelSpec,
    priors: &Priors,
    data: &CaptureData,
    inits: Option<&[ChainState]>,
) -> Result<PosteriorDraws> {
    let pb = Problem::new(spec, priors, cfg, data)?;
    if let Some(v) = inits {
        if v.is_empty() {
            return Err(Error::Config("empty list of initial states".into()));
        }
        for st in v {
            check_init_shape(&pb, st)?;
        }
    }
    let columns = draw_columns(&pb);
    let results: Vec<Result<(Vec<Vec<f64>>, ChainInfo)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.n_chains)
            .map(|c| {
                let pb = &pb;
                let init = inits.map(|v| v[c % v.len()].clone());
                scope.spawn(move || run_chain(pb, data, c, init))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("chain thread panicked".into()))))
            .collect()
    });
    let (rows, chains): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(PosteriorDraws { draws: DrawSet { columns, chains: rows }, chains })
}

fn check_init_shape(pb: &Problem<'_>, st: &ChainState) -> Result<()> {
    let m = pb.m;
    if st.w.len() != m || st.b.len() != m || st.d.len() != m {
        return Err(Error::Dimension(format!("initial state has {} rows, expected M = {m}", st.w.len())));
    }
    st.params.validate(&pb.k2, pb.spec.covariate)?;
    if st.z_mass.len() != pb.records.len() {
        return Err(Error::Dimension("initial latent masses do not match the mass records".into()));
    }
    Ok(())
}

fn run_chain(pb: &Problem<'_>, data: &CaptureData, c: usize, init: Option<ChainState>) -> Result<(Vec<Vec<f64>>, ChainInfo)> {
    let cfg = pb.cfg;
    let mut rng = Chain::rng_for(cfg.seed, c);
    let st = match init {
        Some(st) => st,
        None => initial_state(pb, data, &mut rng)?,
    };
    let parts = log_target(pb, &st, true)?;
    if parts.iter().any(|(_, v)| !v.is_finite()) {
        let dump: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        return Err(Error::Initialization(format!("chain {c}: non-finite log density at start ({})", dump.join(", "))));
    }
    let mut ch = Chain::new(pb, st, rng);
    let total = cfg.n_adapt + cfg.n_iter;
    let progress = |t: usize, ch: &Chain<'_, '_>| {
        if cfg.progress_every > 0 && t.is_multiple_of(cfg.progress_every) {
            let acc: Vec<String> = ch.acceptance().iter().map(|(k, v)| format!("{k}={v:.2}")).collect();
            log::info!("chain {c}: iteration {t}/{total}; acceptance {}", acc.join(" "));
        }
    };
    for t in 1..=cfg.n_adapt {
        ch.set_adaptation(Some(t as u64));
        ch.sweep()?;
        progress(t, &ch);
    }
    ch.set_adaptation(None);
    ch.reset_acceptance();
    let mut rows = Vec::with_capacity(cfg.n_kept());
    let mut violations = 0;
    let mut first_violation = None;
    for t in 1..=cfg.n_iter {
        ch.sweep()?;
        progress(cfg.n_adapt + t, &ch);
        let spot = cfg!(debug_assertions) && t % 100 == 0;
        if t % cfg.thin == 0 {
            rows.push(ch.draw_row()?);
            if cfg.check_invariants || spot {
                let v = ch.invariant_violations();
                if !v.is_empty() {
                    violations += 1;
                    first_violation.get_or_insert_with(|| v.join("; "));
                }
            }
        }
    }
    if cfg!(debug_assertions) && violations > 0 && !cfg.check_invariants {
        return Err(Error::Invariant(first_violation.unwrap_or_default()));
    }
    let info = ChainInfo {
        acceptance: ch.acceptance(),
        invariant_violations: violations,
        first_violation,
        final_state: ch.st.clone(),
    };
    Ok((rows, info))
}
