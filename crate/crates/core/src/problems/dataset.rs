//! Sparse binary-classification datasets: LIBSVM I/O, splits, corruption and
//! a synthetic generator.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{param_err, Error, Result};
use crate::rng::{substream, Purpose};

/// Sparse feature vector with strictly increasing zero-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&j, &v)| v * w[j]).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Which rows were removed or relabeled by [`Dataset::corrupt`].
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub drop_pos_frac: f64,
    pub flip_prob: f64,
    pub removed: usize,
    pub flipped: usize,
}

/// Row indices of the three splits; disjoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<SparseRow>,
    labels: Vec<f64>,
    n_features: usize,
    split: Split,
    corruption: Option<Corruption>,
}

impl Dataset {
    /// Labels must be ±1. Every row starts in the training split.
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, n_features: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return param_err(format!("{} rows but {} labels", rows.len(), labels.len()));
        }
        if let Some(l) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return param_err(format!("labels must be +1 or -1, found {l}"));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.indices.len() != row.values.len() {
                return param_err(format!("row {r}: {} indices, {} values", row.indices.len(), row.values.len()));
            }
            if row.indices.windows(2).any(|w| w[0] >= w[1]) {
                return param_err(format!("row {r}: feature indices are not increasing"));
            }
            if row.indices.last().is_some_and(|&j| j >= n_features) {
                return param_err(format!("row {r}: feature index out of range"));
            }
        }
        let split = Split {
            train: (0..rows.len()).collect(),
            ..Default::default()
        };
        Ok(Self {
            rows,
            labels,
            n_features,
            split,
            corruption: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn corruption(&self) -> Option<&Corruption> {
        self.corruption.as_ref()
    }

    /// Shuffles all rows into train/validation/test parts; the test part gets
    /// what is left after `train_frac + val_frac`.
    pub fn with_split(mut self, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 + 1e-12 {
            return param_err(format!("invalid split fractions {train_frac} / {val_frac}"));
        }
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.shuffle(&mut substream(seed, 0, 0, Purpose::Data));
        let n = order.len() as f64;
        let n_train = (train_frac * n).round() as usize;
        let n_val = ((val_frac * n).round() as usize).min(order.len() - n_train);
        let mut split = Split {
            train: order[..n_train].to_vec(),
            val: order[n_train..n_train + n_val].to_vec(),
            test: order[n_train + n_val..].to_vec(),
        };
        split.train.sort_unstable();
        split.val.sort_unstable();
        split.test.sort_unstable();
        self.split = split;
        Ok(self)
    }

    /// Removes `drop_pos_frac` of the positive training rows and flips each
    /// remaining training label with probability `flip_prob`. Validation and
    /// test rows are untouched.
    pub fn corrupt(&self, drop_pos_frac: f64, flip_prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&drop_pos_frac) || !(0.0..=1.0).contains(&flip_prob) {
            return param_err(format!("corruption fractions must lie in [0, 1], got {drop_pos_frac} and {flip_prob}"));
        }
        let mut rng = substream(seed, 1, 0, Purpose::Data);
        let mut positives: Vec<usize> = self.split.train.iter().copied().filter(|&r| self.labels[r] > 0.0).collect();
        positives.shuffle(&mut rng);
        let n_drop = (drop_pos_frac * positives.len() as f64).round() as usize;
        let mut dropped = positives[..n_drop].to_vec();
        dropped.sort_unstable();

        let mut out = self.clone();
        out.split.train.retain(|r| dropped.binary_search(r).is_err());
        let mut flipped = 0;
        for &r in &out.split.train {
            if rng.random::<f64>() < flip_prob {
                out.labels[r] = -out.labels[r];
                flipped += 1;
            }
        }
        out.corruption = Some(Corruption {
            drop_pos_frac,
            flip_prob,
            removed: n_drop,
            flipped,
        });
        Ok(out)
    }

    /// Dense design matrix of `rows` with a trailing constant-one column.
    pub fn dense_with_intercept(&self, rows: &[usize]) -> DMatrix<f64> {
        let d = self.n_features + 1;
        let mut out = DMatrix::zeros(rows.len(), d);
        for (k, &r) in rows.iter().enumerate() {
            let row = &self.rows[r];
            for (&j, &v) in row.indices.iter().zip(&row.values) {
                out[(k, j)] = v;
            }
            out[(k, d - 1)] = 1.0;
        }
        out
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }

    pub fn write_libsvm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            write!(w, "{}", if label > 0.0 { "+1" } else { "-1" })?;
            for (&j, &v) in row.indices.iter().zip(&row.values) {
                write!(w, " {}:{}", j + 1, v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

/// Parses LIBSVM text (`label idx:val …`, one-based increasing indices).
/// Labels `+1`/`1` map to `+1`, `0`/`-1` to `−1`. `path` is only used in
/// error messages.
pub fn parse_libsvm<R: BufRead>(reader: R, path: &Path) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut n_features = 0;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("line is not empty");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("label `{label_tok}` is not a number")))?;
        let label = if label == 1.0 {
            1.0
        } else if label == 0.0 || label == -1.0 {
            -1.0
        } else {
            return Err(parse_error(path, lineno, format!("label {label} is not binary")));
        };
        let mut row = SparseRow::default();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(path, lineno, format!("token `{tok}` is not idx:value")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("feature index `{idx}` is not a positive integer")))?;
            if idx == 0 {
                return Err(parse_error(path, lineno, "feature indices are one-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("feature value `{val}` is not a number")))?;
            if row.indices.last().is_some_and(|&last| last >= idx - 1) {
                return Err(parse_error(path, lineno, format!("feature index {idx} is not increasing")));
            }
            row.indices.push(idx - 1);
            row.values.push(val);
            n_features = n_features.max(idx);
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels, n_features)
}

pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: PathBuf::from(path),
        source,
    })?;
    parse_libsvm(std::io::BufReader::new(file), path)
}

/// Synthetic stand-in for the a8a data: each feature is present with
/// probability `density` with a standard normal value, and labels come from
/// a planted linear separator plus Gaussian score noise, thresholded so that
/// about `pos_frac` of the rows are positive.
pub fn synthetic(n: usize, d: usize, density: f64, pos_frac: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 || !(0.0..=1.0).contains(&density) || !(0.0..1.0).contains(&pos_frac) {
        return param_err("invalid synthetic dataset parameters");
    }
    let mut rng = substream(seed, 2, 0, Purpose::Data);
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = SparseRow::default();
        for j in 0..d {
            if rng.random::<f64>() < density {
                row.indices.push(j);
                row.values.push(rng.sample(StandardNormal));
            }
        }
        let clean = row.dot(&w);
        let noisy = clean + 0.5 * (density * d as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
        scores.push(noisy);
        rows.push(row);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let cut = sorted[((1.0 - pos_frac) * (n - 1) as f64).round() as usize];
    let labels = scores.iter().map(|&s| if s > cut { 1.0 } else { -1.0 }).collect();
    Dataset::new(rows, labels, d)
}
