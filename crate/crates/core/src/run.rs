//! Run configuration, run directories and plot-ready export.
//!
//! A run directory holds `config.toml` (the fully resolved configuration,
//! enough to replay the run), `data.sha256`, one `chain_N.csv` per chain,
//! `summary.csv` and `log.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::{Standardization, DEFAULT_MASS_MAX};
use crate::data::{ingest_captures, CaptureData, CovariateKind, IngestOptions};
use crate::diagnostics::{summarize, write_summary_csv, SummaryRow};
use crate::draws::DrawSet;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Priors};
use crate::sampler::{self, PosteriorDraws, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Standard,
    Robust,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ModelKind::Standard),
            "robust" => Ok(ModelKind::Robust),
            other => Err(Error::Config(format!("unknown model kind `{other}` (standard|robust)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub covariate: CovariateKind,
    /// Augmentation bound; twice the observed count when absent.
    pub m: Option<usize>,
    pub n_states: u8,
    pub mass_censoring: bool,
    pub mass_max: f64,
    /// Secondary samples per primary; inferred from the data when absent.
    pub k2: Option<Vec<usize>>,
    /// Mean and sd of the recorded masses when absent.
    pub standardization: Option<Standardization>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Standard,
            covariate: CovariateKind::None,
            m: None,
            n_states: 2,
            mass_censoring: true,
            mass_max: DEFAULT_MASS_MAX,
            k2: None,
            standardization: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a fit needs, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub sampler: SamplerConfig,
    pub priors: Priors,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative data paths are taken from the config file's directory
        if let (Some(d), Some(dir)) = (&cfg.paths.data, path.parent()) {
            if d.is_relative() {
                cfg.paths.data = Some(dir.join(d));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            covariate: self.model.covariate,
            k1: self.model.k2.as_ref().map(Vec::len),
            k2: self.model.k2.clone(),
            mass_max: self.model.mass_max,
            n_states: self.model.n_states,
        }
    }

    /// Check settings that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.priors.validate()?;
        if !(self.model.mass_max > 0.0 && self.model.mass_max.is_finite()) {
            return Err(Error::Config("mass_max must be positive".into()));
        }
        if self.model.kind == ModelKind::Standard {
            if let Some(k2) = &self.model.k2 {
                if k2.iter().any(|&n| n != 1) {
                    return Err(Error::Config("standard model needs one secondary sample per primary".into()));
                }
            }
        }
        Ok(())
    }

    /// Fill every data-dependent default so the configuration alone
    /// reproduces the run.
    pub fn resolve(&mut self, data: &CaptureData) -> Result<()> {
        self.model.k2.get_or_insert_with(|| data.k2.clone());
        self.model.m.get_or_insert(2 * data.n_observed());
        if self.model.covariate == CovariateKind::Mass && self.model.standardization.is_none() {
            self.model.standardization = Some(Standardization::from_observations(&data.masses)?);
        }
        Ok(())
    }

    pub fn model_spec(&self, data: &CaptureData) -> Result<ModelSpec> {
        let spec = ModelSpec {
            robust: self.model.kind == ModelKind::Robust,
            covariate: self.model.covariate,
            m: self.model.m.unwrap_or(2 * data.n_observed()),
            n_states: self.model.n_states,
            mass_censoring: self.model.mass_censoring,
            standardization: self.model.standardization,
        };
        spec.validate(data)?;
        Ok(spec)
    }
}

/// Result of a completed fit.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub dir: PathBuf,
    /// The resolved configuration written to `config.toml`.
    pub config: RunConfig,
    pub posterior: PosteriorDraws,
    pub summary: Vec<SummaryRow>,
    pub warnings: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Ingest the data named in `config`, run the sampler and write a run
/// directory at `out`.
pub fn fit(config: &RunConfig, out: &Path) -> Result<FitOutput> {
    config.validate()?;
    let data_path = config
        .paths
        .data
        .clone()
        .ok_or_else(|| Error::Config("no data file given (paths.data or --data)".into()))?;
    let data = ingest_captures(&data_path, &config.ingest_options())?;
    let mut resolved = config.clone();
    resolved.resolve(&data)?;
    resolved.paths = Paths { data: Some(std::fs::canonicalize(&data_path).unwrap_or(data_path.clone())), out: None };
    let spec = resolved.model_spec(&data)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.toml"), &resolved.to_toml()?)?;
    let digest = sha256_file(&data_path)?;
    let file_name = data_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write_text(&out.join("data.sha256"), &format!("{digest}  {file_name}\n"))?;

    log::info!(
        "fitting {} observed individuals, M = {}, {} chains x ({} + {})",
        data.n_observed(),
        spec.m,
        resolved.sampler.n_chains,
        resolved.sampler.n_adapt,
        resolved.sampler.n_iter
    );
    let posterior = sampler::run(&resolved.sampler, &spec, &resolved.priors, &data)?;
    posterior.draws.write_dir(out)?;
    let summary = summarize(&posterior.draws, None)?;
    write_summary_csv(&summary, &out.join("summary.csv"))?;

    let mut warnings = Vec::new();
    let at_bound = fraction_at_bound(&posterior.draws, spec.m)?;
    if at_bound >= 0.01 {
        warnings.push(format!(
            "N_total equals M = {} in {:.1}% of draws; increase M",
            spec.m,
            100.0 * at_bound
        ));
    }
    if posterior.invariant_violations() > 0 {
        warnings.push(format!("{} recorded draws failed a structural check", posterior.invariant_violations()));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    write_text(&out.join("log.txt"), &run_log(&resolved, &data, &spec, &posterior, at_bound, &warnings))?;
    Ok(FitOutput { dir: out.to_path_buf(), config: resolved, posterior, summary, warnings })
}

fn fraction_at_bound(draws: &DrawSet, m: usize) -> Result<f64> {
    let n = draws.pooled("N_total")?;
    Ok(n.iter().filter(|&&v| v >= m as f64).count() as f64 / n.len().max(1) as f64)
}

fn run_log(
    cfg: &RunConfig,
    data: &CaptureData,
    spec: &ModelSpec,
    post: &PosteriorDraws,
    at_bound: f64,
    warnings: &[String],
) -> String {
    let mut s = String::new();
    let sc = &cfg.sampler;
    let _ = writeln!(s, "observed individuals: {}", data.n_observed());
    let _ = writeln!(s, "primary periods: {}; secondary samples: {:?}", data.k1(), data.k2);
    let _ = writeln!(s, "M: {}", spec.m);
    let _ = writeln!(s, "seed: {}; chains: {}; adapt: {}; iter: {}; thin: {}", sc.seed, sc.n_chains, sc.n_adapt, sc.n_iter, sc.thin);
    let _ = writeln!(s, "fraction of draws with N_total = M: {at_bound:.4}");
    for (c, info) in post.chains.iter().enumerate() {
        let _ = writeln!(s, "chain {}: invariant violations {}", c + 1, info.invariant_violations);
        if let Some(v) = &info.first_violation {
            let _ = writeln!(s, "  first violation: {v}");
        }
        for (block, rate) in &info.acceptance {
            let _ = writeln!(s, "  acceptance {block}: {rate:.3}");
        }
    }
    for w in warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Summaries of a run directory's draws; `names` restricts the columns.
pub fn summarize_run(dir: &Path, names: Option<&[String]>) -> Result<Vec<SummaryRow>> {
    let draws = DrawSet::read_dir(dir)?;
    summarize(&draws, names)
}

/// Families of draw columns that `export_plot_data` understands. `N_j`
/// covers the overall and, when present, per-state abundance.
pub fn export_choices(draws: &DrawSet) -> Vec<String> {
    let mut out: Vec<String> = vec!["N_j".into()];
    for c in &draws.columns {
        let fam = match c.split_once('.') {
            Some((f, _)) => f,
            None => c.as_str(),
        };
        if !out.iter().any(|o| o == fam) {
            out.push(fam.to_string());
        }
    }
    out
}

/// One row of the tidy plot export.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub quantity: String,
    pub index: String,
    pub median: f64,
    pub lo50: f64,
    pub hi50: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Medians with central 50% and 95% intervals for one family of columns.
///
/// Quantiles are taken per column, so e.g. the `beta` medians need not sum
/// to one even though every draw does.
pub fn plot_rows(draws: &DrawSet, quantity: &str) -> Result<Vec<PlotRow>> {
    let families: Vec<&str> = if quantity == "N_j" { vec!["N", "N_state"] } else { vec![quantity] };
    let mut rows = Vec::new();
    for name in &draws.columns {
        let (fam, rest) = match name.split_once('.') {
            Some((f, r)) => (f, Some(r)),
            None => (name.as_str(), None),
        };
        if !families.contains(&fam) {
            continue;
        }
        // the last dotted segment is the index; anything before it labels the series
        let (label, index) = match rest {
            None => (fam.to_string(), "1".to_string()),
            Some(r) => match r.rsplit_once('.') {
                Some((mid, idx)) => (format!("{fam}.{mid}"), idx.to_string()),
                None => (fam.to_string(), r.to_string()),
            },
        };
        let r = SummaryRow::from_series(name, &draws.series(name)?)?;
        rows.push(PlotRow { quantity: label, index, median: r.median, lo50: r.q25, hi50: r.q75, lo95: r.q2_5, hi95: r.q97_5 });
    }
    if rows.is_empty() {
        return Err(Error::UnknownLabel { label: quantity.to_string(), available: export_choices(draws).join(", ") });
    }
    Ok(rows)
}

pub fn write_plot_rows<W: std::io::Write>(rows: &[PlotRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["quantity", "index", "median", "lo50", "hi50", "lo95", "hi95"])?;
    for r in rows {
        wtr.write_record([
            r.quantity.clone(),
            r.index.clone(),
            r.median.to_string(),
            r.lo50.to_string(),
            r.hi50.to_string(),
            r.lo95.to_string(),
            r.hi95.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<export>", e))?;
    Ok(())
}

/// Tidy CSV of one quantity from a run directory.
pub fn export_plot_data(dir: &Path, quantity: &str) -> Result<String> {
    let draws = DrawSet::read_dir(dir)?;
    let rows = plot_rows(&draws, quantity)?;
    let mut buf = Vec::new();
    write_plot_rows(&rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Acceptance rates recorded in a run's log, keyed by chain then block.
pub fn acceptance_from_log(dir: &Path) -> Result<BTreeMap<usize, BTreeMap<String, f64>>> {
    let path = dir.join("log.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    let mut chain = 0;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("chain ") {
            chain = rest.split(':').next().and_then(|s| s.parse().ok()).unwrap_or(0);
        } else if let Some(rest) = line.trim().strip_prefix("acceptance ") {
            if let Some((k, v)) = rest.split_once(": ") {
                if let Ok(v) = v.parse() {
                    out.entry(chain).or_default().insert(k.to_string(), v);
                }
            }
        }
    }
    Ok(out)
}
