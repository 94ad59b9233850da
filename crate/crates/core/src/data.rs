//! Observed capture histories and covariate records, with CSV ingestion.
//!
//! One flat format covers both designs. Each row is one (individual, primary,
//! secondary) occasion:
//!
//! ```text
//! id,primary,secondary,captured,covariate,flag
//! A17,1,3,1,42,
//! A17,2,1,1,60,censored
//! B02,4,1,1,,unknown
//! ```
//!
//! Periods are one-based. `secondary` is 1 for standard designs. Rows with
//! `captured = 0` may be present and are ignored. `flag` is empty or one of
//! `censored` (mass at the scale maximum), `absent` (captured, no mass
//! recorded) or `unknown` (categorical state not determined).

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::covariates::{censoring_interval, MassObservation, MassRecord, DEFAULT_MASS_MAX};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    #[default]
    None,
    Mass,
    Categorical,
}

impl std::str::FromStr for CovariateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CovariateKind::None),
            "mass" => Ok(CovariateKind::Mass),
            "categorical" => Ok(CovariateKind::Categorical),
            other => Err(Error::Config(format!("unknown covariate kind `{other}` (none|mass|categorical)"))),
        }
    }
}

/// Options controlling how a capture CSV is interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub covariate: CovariateKind,
    /// Primary period count; inferred from the data when absent.
    pub k1: Option<usize>,
    /// Secondary counts per primary; inferred when absent.
    pub k2: Option<Vec<usize>>,
    pub mass_max: f64,
    pub n_states: u8,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { covariate: CovariateKind::None, k1: None, k2: None, mass_max: DEFAULT_MASS_MAX, n_states: 2 }
    }
}

/// Capture histories for the observed individuals plus covariate records.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureData {
    pub k2: Vec<usize>,
    pub covariate: CovariateKind,
    pub mass_max: f64,
    pub n_states: u8,
    /// External labels of the observed individuals, by row.
    pub ids: Vec<String>,
    /// `n_observed x n_occasions` capture indicators; occasion index runs over
    /// (primary, secondary) in order.
    pub captures: Array2<u8>,
    /// Recorded masses (mass covariate only).
    pub masses: Vec<MassObservation>,
    /// Observed categorical state per (individual, primary); 0 = not observed.
    pub states: Array2<u8>,
}

impl CaptureData {
    /// Empty data set for a design with no captures.
    pub fn empty(k2: Vec<usize>, covariate: CovariateKind) -> Self {
        let k1 = k2.len();
        let n_occ = k2.iter().sum();
        CaptureData {
            k2,
            covariate,
            mass_max: DEFAULT_MASS_MAX,
            n_states: 2,
            ids: Vec::new(),
            captures: Array2::zeros((0, n_occ)),
            masses: Vec::new(),
            states: Array2::zeros((0, k1)),
        }
    }

    pub fn k1(&self) -> usize {
        self.k2.len()
    }

    pub fn n_observed(&self) -> usize {
        self.ids.len()
    }

    pub fn occasion_offsets(&self) -> Vec<usize> {
        let mut out = vec![0];
        for &n in &self.k2 {
            out.push(out.last().unwrap() + n);
        }
        out
    }

    pub fn caught(&self, i: usize, j: usize, l: usize) -> bool {
        let off: usize = self.k2[..j].iter().sum();
        self.captures[[i, off + l]] == 1
    }

    /// Primary periods in which individual `i` was caught at least once.
    pub fn captured_periods(&self, i: usize) -> Vec<usize> {
        let offs = self.occasion_offsets();
        (0..self.k1())
            .filter(|&j| (offs[j]..offs[j + 1]).any(|o| self.captures[[i, o]] == 1))
            .collect()
    }

    pub fn first_last_capture(&self, i: usize) -> Option<(usize, usize)> {
        let p = self.captured_periods(i);
        Some((*p.first()?, *p.last()?))
    }

    /// Censoring intervals of the recorded masses, in record order.
    pub fn mass_records(&self) -> Result<Vec<MassRecord>> {
        self.masses
            .iter()
            .map(|o| {
                let (lo, hi) = censoring_interval(true, Some(o.z_obs), self.mass_max)?;
                Ok(MassRecord { i: o.i, j: o.j, l: o.l, lo, hi, z_obs: o.z_obs })
            })
            .collect()
    }

    /// SHA-256 of the canonical CSV rendering.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }

    pub fn validate(&self) -> Result<()> {
        let k1 = self.k1();
        if k1 < 2 {
            return Err(Error::Validation("need at least two primary periods".into()));
        }
        let n = self.n_observed();
        if self.captures.dim() != (n, self.k2.iter().sum()) || self.states.dim() != (n, k1) {
            return Err(Error::Dimension("capture or state matrix does not match the design".into()));
        }
        for i in 0..n {
            if self.first_last_capture(i).is_none() {
                return Err(Error::Validation(format!("individual `{}` has no captures", self.ids[i])));
            }
        }
        for o in &self.masses {
            if o.i >= n || o.j >= k1 || o.l >= self.k2[o.j] || !self.caught(o.i, o.j, o.l) {
                return Err(Error::Validation(format!("mass record {o:?} is not on a capture occasion")));
            }
            if o.z_obs > self.mass_max {
                return Err(Error::Validation(format!("mass {} above the scale maximum", o.z_obs)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn write_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["id", "primary", "secondary", "captured", "covariate", "flag"])?;
        let mass_at: HashMap<(usize, usize, usize), &MassObservation> =
            self.masses.iter().map(|o| ((o.i, o.j, o.l), o)).collect();
        for i in 0..self.n_observed() {
            for j in 0..self.k1() {
                for l in 0..self.k2[j] {
                    if !self.caught(i, j, l) {
                        continue;
                    }
                    let (cov, flag) = match self.covariate {
                        CovariateKind::None => (String::new(), ""),
                        CovariateKind::Mass => match mass_at.get(&(i, j, l)) {
                            Some(o) if o.censored_at_max => (format_num(o.z_obs), "censored"),
                            Some(o) => (format_num(o.z_obs), ""),
                            None => (String::new(), "absent"),
                        },
                        CovariateKind::Categorical => match self.states[[i, j]] {
                            0 => (String::new(), "unknown"),
                            s => (s.to_string(), ""),
                        },
                    };
                    wtr.write_record([
                        self.ids[i].as_str(),
                        &(j + 1).to_string(),
                        &(l + 1).to_string(),
                        "1",
                        &cov,
                        flag,
                    ])?;
                }
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn format_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[derive(Debug)]
struct Row {
    line: usize,
    id: String,
    j: usize,
    l: usize,
    covariate: Option<f64>,
    flag: String,
}

/// Parse and validate a capture CSV.
pub fn ingest_captures(path: &Path, opts: &IngestOptions) -> Result<CaptureData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_from_reader(file, path, opts)
}

pub fn ingest_from_reader<R: std::io::Read>(reader: R, path: &Path, opts: &IngestOptions) -> Result<CaptureData> {
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let expected = ["id", "primary", "secondary", "captured"];
    for (k, name) in expected.iter().enumerate() {
        if headers.get(k) != Some(name) {
            return Err(perr(1, format!("expected column {} to be `{name}`, header is {:?}", k + 1, headers)));
        }
    }

    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        if rec.len() < 4 {
            return Err(perr(line, format!("expected at least 4 fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(perr(line, "empty individual id".into()));
        }
        let parse_idx = |s: &str, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(perr(line, format!("{what} `{s}` is not a positive integer"))),
            }
        };
        let j = parse_idx(&rec[1], "primary period")?;
        let l = parse_idx(&rec[2], "secondary sample")?;
        let captured = match &rec[3] {
            "1" => true,
            "0" => false,
            other => return Err(perr(line, format!("captured flag `{other}` must be 0 or 1"))),
        };
        let covariate = match rec.get(4).unwrap_or("") {
            "" | "NA" => None,
            s => Some(s.parse::<f64>().map_err(|_| perr(line, format!("covariate `{s}` is not a number")))?),
        };
        let flag = rec.get(5).unwrap_or("").to_string();
        if !matches!(flag.as_str(), "" | "censored" | "absent" | "unknown") {
            return Err(perr(line, format!("unknown flag `{flag}`")));
        }
        if captured {
            rows.push(Row { line, id, j, l, covariate, flag });
        }
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{}: no captures in file", path.display())));
    }

    // design
    let k1 = match opts.k1 {
        Some(k) => k,
        None => rows.iter().map(|r| r.j + 1).max().unwrap(),
    };
    let k2 = match &opts.k2 {
        Some(v) => v.clone(),
        None => {
            let mut v = vec![1usize; k1];
            for r in rows.iter().filter(|r| r.j < k1) {
                v[r.j] = v[r.j].max(r.l + 1);
            }
            v
        }
    };
    if k2.len() != k1 {
        return Err(Error::Validation(format!("k2 has {} entries for {k1} primary periods", k2.len())));
    }
    for r in &rows {
        if r.j >= k1 || r.l >= k2[r.j] {
            return Err(perr(r.line, format!("occasion ({}, {}) outside the {k1}-period design", r.j + 1, r.l + 1)));
        }
    }

    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut ids = Vec::new();
    for r in &rows {
        if !index.contains_key(&r.id) {
            index.insert(r.id.clone(), ids.len());
            ids.push(r.id.clone());
        }
    }
    let n = ids.len();
    let offs: Vec<usize> = std::iter::once(0).chain(k2.iter().scan(0, |acc, &x| { *acc += x; Some(*acc) })).collect();
    let mut captures = Array2::<u8>::zeros((n, offs[k1]));
    let mut states = Array2::<u8>::zeros((n, k1));
    let mut masses = Vec::new();

    for r in &rows {
        let i = index[&r.id];
        let occ = offs[r.j] + r.l;
        if captures[[i, occ]] == 1 {
            return Err(perr(r.line, format!("duplicate record for `{}` at ({}, {})", r.id, r.j + 1, r.l + 1)));
        }
        captures[[i, occ]] = 1;
        match opts.covariate {
            CovariateKind::None => {}
            CovariateKind::Mass => {
                let z = match (r.covariate, r.flag.as_str()) {
                    (Some(z), "censored") if z != opts.mass_max => {
                        return Err(perr(r.line, format!("censored mass must equal the scale maximum {}", opts.mass_max)))
                    }
                    (None, "censored") => Some(opts.mass_max),
                    (Some(z), "" | "censored") => Some(z),
                    (_, "absent") => None,
                    (None, _) => return Err(perr(r.line, "captured without a mass; set flag `absent`".into())),
                    (Some(_), f) => return Err(perr(r.line, format!("flag `{f}` does not apply to mass"))),
                };
                if let Some(z) = z {
                    let obs = MassObservation::new(i, r.j, r.l, z, opts.mass_max)
                        .map_err(|e| perr(r.line, e.to_string()))?;
                    masses.push(obs);
                }
            }
            CovariateKind::Categorical => {
                let s = match (r.covariate, r.flag.as_str()) {
                    (None, _) | (_, "unknown") => 0u8,
                    (Some(v), "") => {
                        if v.fract() != 0.0 || v < 1.0 || v > opts.n_states as f64 {
                            return Err(perr(r.line, format!("state `{v}` outside 1..={}", opts.n_states)));
                        }
                        v as u8
                    }
                    (Some(_), f) => return Err(perr(r.line, format!("flag `{f}` does not apply to states"))),
                };
                if s != 0 {
                    let prev = states[[i, r.j]];
                    if prev != 0 && prev != s {
                        return Err(perr(r.line, format!("conflicting states for `{}` in primary {}", r.id, r.j + 1)));
                    }
                    states[[i, r.j]] = s;
                }
            }
        }
    }
    masses.sort_by_key(|o| (o.i, o.j, o.l));

    let data = CaptureData {
        k2,
        covariate: opts.covariate,
        mass_max: opts.mass_max,
        n_states: opts.n_states,
        ids,
        captures,
        masses,
        states,
    };
    data.validate()?;
    Ok(data)
}
