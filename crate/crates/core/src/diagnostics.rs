//! Convergence diagnostics and posterior summaries.

use std::path::Path;

use crate::draws::DrawSet;
use crate::error::{Error, Result};
use crate::math::quantile_sorted;

/// Draws per chain below which `diag` refuses to report.
pub const MIN_DIAG_LENGTH: usize = 10;

/// Potential scale reduction factor (variance form) of one scalar.
///
/// Reported as `max(R, 1)`. Constant chains that agree give exactly 1;
/// constant chains that disagree give `+inf`.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Diagnostics(
            "the potential scale reduction factor needs at least two chains; rerun with --chains 2 or more".into(),
        ));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Diagnostics("chains differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Diagnostics(format!("chains of length {n} are too short")));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let r = (((nf - 1.0) / nf * w + b / nf) / w).sqrt();
    Ok(r.max(1.0))
}

/// Posterior summary of one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub median: f64,
    pub q2_5: f64,
    pub q25: f64,
    pub q75: f64,
    pub q97_5: f64,
    /// `None` with a single chain or when undefined draws prevent it.
    pub psrf: Option<f64>,
    pub n_draws: usize,
}

impl SummaryRow {
    /// Summarize per-chain series of one scalar. Undefined (NaN) draws are
    /// dropped from the quantiles; the psrf then needs every chain complete.
    pub fn from_series(name: &str, chains: &[Vec<f64>]) -> Result<Self> {
        let mut v: Vec<f64> = chains.iter().flatten().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return Err(Error::Diagnostics(format!("no defined draws for `{name}`")));
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let complete = chains.iter().all(|c| c.iter().all(|x| !x.is_nan()));
        let psrf = if chains.len() >= 2 && complete { psrf(chains).ok() } else { None };
        Ok(SummaryRow {
            name: name.to_string(),
            median: quantile_sorted(&v, 0.5),
            q2_5: quantile_sorted(&v, 0.025),
            q25: quantile_sorted(&v, 0.25),
            q75: quantile_sorted(&v, 0.75),
            q97_5: quantile_sorted(&v, 0.975),
            psrf,
            n_draws: v.len(),
        })
    }

    pub fn covers95(&self, x: f64) -> bool {
        self.q2_5 <= x && x <= self.q97_5
    }

    pub fn covers50(&self, x: f64) -> bool {
        self.q25 <= x && x <= self.q75
    }
}

/// Summaries of the named columns (all columns when `names` is `None`).
pub fn summarize(draws: &DrawSet, names: Option<&[String]>) -> Result<Vec<SummaryRow>> {
    if draws.n_draws() == 0 {
        return Err(Error::Diagnostics("no draws to summarize".into()));
    }
    let names: Vec<String> = match names {
        Some(n) => n.to_vec(),
        None => draws.columns.clone(),
    };
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        let series = draws.series(name)?;
        match SummaryRow::from_series(name, &series) {
            Ok(r) => rows.push(r),
            // a derived quantity undefined on every draw is skipped
            Err(Error::Diagnostics(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// R-hat for every column; fails unless there are at least two chains of
/// at least `MIN_DIAG_LENGTH` draws.
pub fn psrf_table(draws: &DrawSet) -> Result<Vec<(String, Option<f64>)>> {
    if draws.n_chains() < 2 {
        return Err(Error::Diagnostics(format!(
            "convergence diagnostics need at least two chains, found {}; rerun with --chains 2 or more",
            draws.n_chains()
        )));
    }
    let n = draws.chains[0].len();
    if n < MIN_DIAG_LENGTH || draws.chains.iter().any(|c| c.len() != n) {
        return Err(Error::Diagnostics(format!(
            "convergence diagnostics need equal-length chains of at least {MIN_DIAG_LENGTH} draws"
        )));
    }
    draws
        .columns
        .iter()
        .map(|name| {
            let s = draws.series(name)?;
            let complete = s.iter().all(|c| c.iter().all(|x| !x.is_nan()));
            Ok((name.clone(), if complete { Some(psrf(&s)?) } else { None }))
        })
        .collect()
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        format!("{v}")
    }
}

pub const SUMMARY_HEADER: [&str; 8] = ["name", "median", "q2.5", "q25", "q75", "q97.5", "psrf", "n_draws"];

pub fn write_summary<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SUMMARY_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.name.clone(),
            fmt(r.median),
            fmt(r.q2_5),
            fmt(r.q25),
            fmt(r.q75),
            fmt(r.q97_5),
            r.psrf.map_or_else(|| "NA".to_string(), fmt),
            r.n_draws.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_summary(rows, std::io::BufWriter::new(file))
}
