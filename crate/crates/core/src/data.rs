//! Synthetic datasets and deterministic mini-batch plans.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense_inverse, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Targets,
    /// Present for classification only.
    pub n_classes: Option<usize>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Targets, n_classes: Option<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dim(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        match (&y, n_classes) {
            (Targets::Classes(labels), Some(k)) => {
                if let Some(bad) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::param("label", format!("{bad} out of range for {k} classes")));
                }
            }
            (Targets::Classes(_), None) => {
                return Err(Error::param("n_classes", "required for classification"));
            }
            (Targets::Values(_), Some(_)) => {
                return Err(Error::param("n_classes", "not meaningful for regression"));
            }
            (Targets::Values(_), None) => {}
        }
        Ok(Self { x, y, n_classes })
    }

    pub fn task(&self) -> Task {
        match self.y {
            Targets::Classes(_) => Task::Classification,
            Targets::Values(_) => Task::Regression,
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    /// Width of the network output this dataset needs.
    pub fn n_outputs(&self) -> usize {
        self.n_classes.unwrap_or(1)
    }

    /// Rows `idx` as a feature matrix plus matching targets.
    pub fn gather(&self, idx: &[usize]) -> (Matrix, Targets) {
        let d = self.x.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        (Matrix::from_vec_unchecked(idx.len(), d, data), self.y.select(idx))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (x, y) = self.gather(idx);
        Dataset {
            x,
            y,
            n_classes: self.n_classes,
        }
    }

    /// Deterministic 80/20 train/test split.
    ///
    /// Indices are permuted with a seeded stream; every fifth position of the
    /// permutation goes to the test set. Both halves keep the original order.
    pub fn split(&self, seed: u64) -> (Dataset, Dataset) {
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut rng::stream("split", seed, 0));
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, &i) in perm.iter().enumerate() {
            if pos % 5 == 4 {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        match (&self.y, self.n_classes) {
            (Targets::Classes(labels), Some(k)) => {
                let mut counts = vec![0; k];
                for &l in labels {
                    counts[l] += 1;
                }
                Some(counts)
            }
            _ => None,
        }
    }

    /// CSV with header `f0,...,f{d-1},label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..self.n_features()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(match &self.y {
                Targets::Classes(v) => v[i].to_string(),
                Targets::Values(v) => format!("{:?}", v[i]),
            });
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        crate::fsutil::write_atomic(path, &bytes)
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. For classification the
    /// class count is the largest label plus one unless given.
    pub fn read_csv(path: &Path, task: Task, n_classes: Option<usize>) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let d = header.len().checked_sub(1).filter(|&d| d >= 1).ok_or_else(|| {
            Error::param("csv header", "expected f0,...,f{d-1},label")
        })?;
        for (j, name) in header.iter().take(d).enumerate() {
            if name != format!("f{j}") {
                return Err(Error::param("csv header", format!("column {j} is {name:?}, expected f{j}")));
            }
        }
        if &header[d] != "label" {
            return Err(Error::param("csv header", "last column must be `label`"));
        }

        let mut x = Vec::new();
        let mut classes = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for j in 0..d {
                let v: f64 = rec[j].trim().parse().map_err(|_| {
                    Error::param("csv", format!("row {line}: bad feature {:?}", &rec[j]))
                })?;
                x.push(v);
            }
            let label = rec[d].trim();
            match task {
                Task::Classification => classes.push(label.parse::<usize>().map_err(|_| {
                    Error::param("csv", format!("row {line}: bad class label {label:?}"))
                })?),
                Task::Regression => values.push(label.parse::<f64>().map_err(|_| {
                    Error::param("csv", format!("row {line}: bad target {label:?}"))
                })?),
            }
        }
        let n = x.len() / d;
        let x = Matrix::new(n, d, x)?;
        match task {
            Task::Classification => {
                let k = n_classes.unwrap_or_else(|| classes.iter().max().map_or(0, |m| m + 1));
                Dataset::new(x, Targets::Classes(classes), Some(k))
            }
            Task::Regression => Dataset::new(x, Targets::Values(values), None),
        }
    }
}

/// Standardizes every column to zero mean and unit (population) variance.
fn standardize(x: &mut Matrix) {
    let (n, d) = x.shape();
    for j in 0..d {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let centered = x.get(i, j) - mean;
            x.set(i, j, if sd > 0.0 { centered / sd } else { centered });
        }
    }
}

/// Gaussian blobs on an integer lattice.
///
/// Class `c` sits at the lattice point whose coordinates are the base-`s`
/// digits of `c` (with `s` the smallest side ≥ 2 such that `s^d ≥ k`), scaled by
/// `4·spread`. `spread` is the two-sigma radius of each cluster, so the
/// per-coordinate noise has standard deviation `spread / 2`. Sample `i` has
/// label `i mod k`. Features are standardized afterwards.
pub fn gen_blobs(seed: u64, n: usize, d: usize, k: usize, spread: f64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::param("k", "need at least 2 classes"));
    }
    if n < k {
        return Err(Error::param("n", format!("{n} samples for {k} classes")));
    }
    if d < 1 {
        return Err(Error::param("d", "need at least one feature"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::param("spread", "must be positive"));
    }
    let mut side = 2usize;
    while (side as f64).powi(d.min(64) as i32) < k as f64 {
        side += 1;
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut rest = c;
            (0..d)
                .map(|_| {
                    let digit = rest % side;
                    rest /= side;
                    4.0 * spread * digit as f64
                })
                .collect()
        })
        .collect();

    let sd = spread / 2.0;
    let mut noise = rng::stream("blobs", seed, 0);
    let mut x = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c);
        for mean in &means[c] {
            let z: f64 = StandardNormal.sample(&mut noise);
            x.push(mean + sd * z);
        }
    }
    let mut x = Matrix::new(n, d, x)?;
    standardize(&mut x);
    Dataset::new(x, Targets::Classes(labels), Some(k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinReg {
    pub dataset: Dataset,
    /// Generating weights (no intercept).
    pub w_star: Vec<f64>,
}

/// Linear regression data `y = x·w* + ε` with standardized Gaussian features.
pub fn gen_linreg(seed: u64, n: usize, d: usize, noise_sd: f64) -> Result<LinReg> {
    if d < 1 {
        return Err(Error::param("d", "need at least one feature"));
    }
    if n <= d {
        return Err(Error::param("n", format!("need more samples than features ({n} <= {d})")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::param("noise_sd", "must be non-negative"));
    }
    for attempt in 0..=3u64 {
        let mut r = rng::stream("linreg", seed, attempt);
        let mut x = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut r));
        standardize(&mut x);
        if !has_full_column_rank(&x) {
            continue;
        }
        let w_star: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let y = (0..n)
            .map(|i| {
                let clean: f64 = x.row(i).iter().zip(&w_star).map(|(a, b)| a * b).sum();
                let eps: f64 = StandardNormal.sample(&mut r);
                clean + noise_sd * eps
            })
            .collect();
        let dataset = Dataset::new(x, Targets::Values(y), None)?;
        return Ok(LinReg { dataset, w_star });
    }
    Err(Error::param("seed", "design matrix rank deficient after 3 retries"))
}

fn with_bias_column(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    Matrix::from_fn(n, d + 1, |i, j| if j < d { x.get(i, j) } else { 1.0 })
}

fn has_full_column_rank(x: &Matrix) -> bool {
    let xb = with_bias_column(x);
    xb.t_matmul(&xb).map(|g| dense_inverse(&g).is_ok()).unwrap_or(false)
}

/// Closed-form least squares with an intercept via the normal equations.
/// Returns `[w_0, ..., w_{d-1}, bias]`.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if x.rows() != y.len() {
        return Err(Error::dim(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    let xb = with_bias_column(x);
    let gram_inv = dense_inverse(&xb.t_matmul(&xb)?)?;
    let ycol = Matrix::from_vec_unchecked(y.len(), 1, y.to_vec());
    let xty = xb.t_matmul(&ycol)?;
    Ok(gram_inv.matmul(&xty)?.into_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::param(
                "batch_size",
                format!("{} not in [1, {n}]", self.batch_size),
            ));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }
}

/// The batches of one epoch: a seeded permutation of `0..n` cut into chunks.
pub fn batches(n: usize, plan: &BatchPlan, epoch: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream("batches", plan.seed, epoch));
    perm.chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}
