//! Posterior draw tables and their CSV files.
//!
//! One file per chain, one row per kept iteration, a header naming every
//! column. Missing values (undefined derived quantities) are written `NA`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Draws of named scalars from one or more chains.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrawSet {
    pub columns: Vec<String>,
    /// `chains[c][t][k]`: chain `c`, kept iteration `t`, column `k`.
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl DrawSet {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::UnknownLabel {
            label: name.to_string(),
            available: self.columns.join(", "),
        })
    }

    /// Per-chain series of one column.
    pub fn series(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let k = self.column_index(name)?;
        Ok(self.chains.iter().map(|c| c.iter().map(|r| r[k]).collect()).collect())
    }

    /// One column with all chains concatenated.
    pub fn pooled(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.series(name)?.concat())
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Write `chain_1.csv`, `chain_2.csv`, ... into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for (c, rows) in self.chains.iter().enumerate() {
            let path = dir.join(format!("chain_{}.csv", c + 1));
            write_chain_csv(&path, &self.columns, rows)?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Read every `chain_N.csv` in `dir`, ordered by `N`.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let n = name.strip_prefix("chain_")?.strip_suffix(".csv")?.parse().ok()?;
                Some((n, e.path()))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Validation(format!("no chain_N.csv files in {}", dir.display())));
        }
        let mut set = DrawSet::default();
        for (_, path) in files {
            let (cols, rows) = read_chain_csv(&path)?;
            if set.columns.is_empty() {
                set.columns = cols;
            } else if set.columns != cols {
                return Err(Error::Validation(format!("{} has different columns from the other chains", path.display())));
            }
            set.chains.push(rows);
        }
        Ok(set)
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_value(s: &str) -> Option<f64> {
    match s {
        "NA" | "NaN" | "" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

pub fn write_chain_csv(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
    wtr.write_record(columns)?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::Dimension(format!("draw row has {} values for {} columns", row.len(), columns.len())));
        }
        wtr.write_record(row.iter().map(|&v| format_value(v)))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_chain_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let columns: Vec<String> = rdr.headers().map_err(|e| perr(1, e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| perr(n + 2, e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| parse_value(s).ok_or_else(|| perr(n + 2, format!("`{s}` is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = DrawSet {
            columns: vec!["a".into(), "b.1".into()],
            chains: vec![vec![vec![0.1, f64::NAN], vec![1e-300, 3.0]], vec![vec![-2.5, 1.0 / 3.0], vec![7.0, 0.0]]],
        };
        set.write_dir(dir.path()).unwrap();
        let back = DrawSet::read_dir(dir.path()).unwrap();
        assert_eq!(back.columns, set.columns);
        assert!(back.chains[0][0][1].is_nan());
        assert_eq!(back.chains[1], set.chains[1]);
        assert_eq!(back.chains[0][1], set.chains[0][1]);
        assert!(back.series("nope").is_err());
        assert_eq!(back.pooled("a").unwrap().len(), 4);
    }
}
