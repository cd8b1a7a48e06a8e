//! Observations bound to a hierarchy: response, leaf class and numeric covariates.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("node {0} is not a leaf")]
    NotALeaf(NodeId),
    #[error("leaf label '{0}' is not in the hierarchy")]
    UnknownLeaf(String),
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
    #[error("column index {0} out of range")]
    NoSuchColumn(usize),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: {msg}")]
    BadValue { row: usize, msg: String },
    #[error("poisson response must be a nonnegative integer, got {0}")]
    NonCountResponse(f64),
    #[error("training fraction {0} is not in (0, 1)")]
    BadFraction(f64),
    #[error("level {0} does not exist")]
    BadLevel(usize),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Response distribution; determines link, loss and likelihood downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            other => Err(format!("unknown family '{other}'")),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// Leaf index within the leaf level, per observation.
    pub leaf: Vec<usize>,
    /// Row-major covariates, `n * covariate_names.len()`.
    pub x: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub family: Family,
}

/// Mean and sample standard deviation (n - 1 denominator) of one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub mean: f64,
    pub sd: f64,
}

/// One-hot vector of a leaf over the leaf level's ordering.
pub fn one_hot(leaf: NodeId, hierarchy: &Hierarchy) -> Result<Vec<f64>, DatasetError> {
    if leaf.level != hierarchy.leaf_level() || !hierarchy.contains(leaf) {
        return Err(DatasetError::NotALeaf(leaf));
    }
    let mut v = vec![0.0; hierarchy.num_leaves()];
    v[leaf.index] = 1.0;
    Ok(v)
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        leaf: Vec<usize>,
        x: Vec<f64>,
        covariate_names: Vec<String>,
        family: Family,
    ) -> Result<Self, DatasetError> {
        assert_eq!(y.len(), leaf.len(), "response and leaf lengths differ");
        assert_eq!(
            x.len(),
            y.len() * covariate_names.len(),
            "covariate matrix has wrong size"
        );
        if family == Family::Poisson {
            if let Some(&bad) = y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0)) {
                return Err(DatasetError::NonCountResponse(bad));
            }
        }
        Ok(Self {
            y,
            leaf,
            x,
            covariate_names,
            family,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.num_covariates();
        &self.x[i * p..(i + 1) * p]
    }

    /// Checks every leaf index against the hierarchy's leaf level.
    pub fn check_bound(&self, hierarchy: &Hierarchy) -> Result<(), DatasetError> {
        let n_leaves = hierarchy.num_leaves();
        match self.leaf.iter().find(|&&l| l >= n_leaves) {
            Some(&l) => Err(DatasetError::NotALeaf(NodeId::new(hierarchy.leaf_level(), l))),
            None => Ok(()),
        }
    }

    /// Observations at the given positions, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let p = self.num_covariates();
        let mut x = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            leaf: rows.iter().map(|&i| self.leaf[i]).collect(),
            x,
            covariate_names: self.covariate_names.clone(),
            family: self.family,
        }
    }

    /// Drops covariates by name; unknown names are ignored.
    pub fn drop_columns(&self, names: &[String]) -> Dataset {
        let keep: Vec<usize> = (0..self.num_covariates())
            .filter(|&j| !names.contains(&self.covariate_names[j]))
            .collect();
        let mut x = Vec::with_capacity(self.len() * keep.len());
        for i in 0..self.len() {
            let row = self.row(i);
            x.extend(keep.iter().map(|&j| row[j]));
        }
        Dataset {
            y: self.y.clone(),
            leaf: self.leaf.clone(),
            x,
            covariate_names: keep.iter().map(|&j| self.covariate_names[j].clone()).collect(),
            family: self.family,
        }
    }

    /// Standardizes the selected columns to mean 0, sd 1 using this dataset's statistics.
    pub fn standardize(&self, columns: &[usize]) -> Result<(Dataset, Vec<ColumnStats>), DatasetError> {
        let p = self.num_covariates();
        let n = self.len();
        let mut stats = Vec::with_capacity(columns.len());
        for &j in columns {
            if j >= p {
                return Err(DatasetError::NoSuchColumn(j));
            }
            let mean = (0..n).map(|i| self.x[i * p + j]).sum::<f64>() / n as f64;
            let ss: f64 = (0..n).map(|i| (self.x[i * p + j] - mean).powi(2)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(DatasetError::ZeroVariance(self.covariate_names[j].clone()));
            }
            stats.push(ColumnStats { column: j, mean, sd });
        }
        Ok((self.apply_standardization(&stats), stats))
    }

    /// Applies previously computed statistics (e.g. training-split statistics to test data).
    pub fn apply_standardization(&self, stats: &[ColumnStats]) -> Dataset {
        let p = self.num_covariates();
        let mut out = self.clone();
        for s in stats {
            for i in 0..self.len() {
                let v = &mut out.x[i * p + s.column];
                *v = (*v - s.mean) / s.sd;
            }
        }
        out
    }

    /// Splits within each class at `stratum_level`: `max(1, round(frac * count))`
    /// observations of every stratum go to the training part.
    pub fn stratified_split(
        &self,
        hierarchy: &Hierarchy,
        frac_train: f64,
        stratum_level: usize,
        seed: u64,
    ) -> Result<(Dataset, Dataset), DatasetError> {
        if !(frac_train > 0.0 && frac_train < 1.0) {
            return Err(DatasetError::BadFraction(frac_train));
        }
        if stratum_level >= hierarchy.num_levels() {
            return Err(DatasetError::BadLevel(stratum_level));
        }
        self.check_bound(hierarchy)?;
        let leaf_level = hierarchy.leaf_level();
        let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.leaf.iter().enumerate() {
            let s = hierarchy
                .ancestor_at(NodeId::new(leaf_level, l), stratum_level)
                .expect("bound leaf");
            strata.entry(s.index).or_default().push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for rows in strata.values_mut() {
            rows.shuffle(&mut rng);
            let take = ((frac_train * rows.len() as f64).round() as usize).max(1);
            train.extend_from_slice(&rows[..take]);
            test.extend_from_slice(&rows[take..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// Reads the data CSV: required `y` and `h_leaf` columns, every other column numeric.
    ///
    /// Columns listed in `drop` are removed before parsing, so they may hold missing values.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        hierarchy: &Hierarchy,
        family: Family,
        drop: &[String],
    ) -> Result<Dataset, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let y_col = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| DatasetError::MissingColumn("y".into()))?;
        let leaf_col = headers
            .iter()
            .position(|h| h == "h_leaf")
            .ok_or_else(|| DatasetError::MissingColumn("h_leaf".into()))?;
        let dropped: HashSet<&str> = drop.iter().map(String::as_str).collect();
        let cov_cols: Vec<usize> = (0..headers.len())
            .filter(|&j| j != y_col && j != leaf_col && !dropped.contains(headers[j].as_str()))
            .collect();
        let leaves = hierarchy.leaf_index();
        let (mut y, mut leaf, mut x) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64, DatasetError> {
                let s = rec.get(j).unwrap_or("").trim();
                s.parse::<f64>().map_err(|_| DatasetError::BadValue {
                    row,
                    msg: format!("column '{}' value '{s}' is not numeric", headers[j]),
                })
            };
            y.push(parse(y_col)?);
            let label = rec.get(leaf_col).unwrap_or("").trim();
            let id = leaves
                .get(label)
                .ok_or_else(|| DatasetError::UnknownLeaf(label.to_string()))?;
            leaf.push(id.index);
            for &j in &cov_cols {
                x.push(parse(j)?);
            }
        }
        let names = cov_cols.iter().map(|&j| headers[j].clone()).collect();
        Dataset::new(y, leaf, x, names, family)
    }

    pub fn from_csv_path(
        path: impl AsRef<Path>,
        hierarchy: &Hierarchy,
        family: Family,
        drop: &[String],
    ) -> Result<Dataset, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, hierarchy, family, drop)
    }

    pub fn write_csv<W: Write>(&self, writer: W, hierarchy: &Hierarchy) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "h_leaf".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        wtr.write_record(&header)?;
        let leaf_level = hierarchy.leaf_level();
        for i in 0..self.len() {
            let mut rec = vec![
                format_float(self.y[i]),
                hierarchy.label(NodeId::new(leaf_level, self.leaf[i])).to_string(),
            ];
            rec.extend(self.row(i).iter().map(|&v| format_float(v)));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same f64.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}
