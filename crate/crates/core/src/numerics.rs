//! Small dense kernel used by every stage of the pipeline.
//!
//! Vectors are plain `[f64]` slices; matrices are [`Mat`], row-major. All
//! functions are pure and never return NaN or infinities for finite inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard used in place of a vanishing standard deviation.
pub const DEFAULT_STD_EPS: f64 = 1e-8;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on zero, so guard the empty-column case
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `weights · self`, a convex (or arbitrary) combination of the rows.
    pub fn combine_rows(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.rows {
            return Err(Error::Shape(format!(
                "{} row weights for a matrix with {} rows",
                weights.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (w, row) in weights.iter().zip(self.iter_rows()) {
            axpy(*w, row, &mut out);
        }
        Ok(out)
    }
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Arithmetic mean, shifted by the first entry so constant inputs come back exact.
pub fn mean(x: &[f64]) -> f64 {
    let Some(&first) = x.first() else {
        return f64::NAN;
    };
    first + x.iter().map(|v| v - first).sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn population_std(x: &[f64]) -> f64 {
    let mu = mean(x);
    (x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn max(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn min(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Index of the first maximal entry.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in x.iter().enumerate() {
        match best {
            Some(b) if x[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    let shift = max(x);
    let mut out: Vec<f64> = x.iter().map(|v| (v - shift).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

pub fn logsumexp(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "logsumexp of an empty vector".into(),
        ));
    }
    let shift = max(x);
    Ok(shift + x.iter().map(|v| (v - shift).exp()).sum::<f64>().ln())
}

/// Column means, i.e. mean pooling over the rows of `m`.
pub fn mean_over_rows(m: &Mat) -> Result<Vec<f64>> {
    if m.rows() == 0 {
        return Err(Error::InvalidArgument(
            "mean over rows of a matrix with zero rows".into(),
        ));
    }
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        axpy(1.0, row, &mut out);
    }
    let scale = 1.0 / m.rows() as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Row means, i.e. one value per row.
pub fn mean_over_features(m: &Mat) -> Result<Vec<f64>> {
    if m.cols() == 0 {
        return Err(Error::InvalidArgument(
            "mean over features of a matrix with zero columns".into(),
        ));
    }
    Ok(m.iter_rows().map(mean).collect())
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine with a zero-norm vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Output of [`standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation before the eps guard.
    pub std: f64,
}

impl Standardized {
    /// Divisor actually used: `max(std, eps)`.
    pub fn scale(&self, eps: f64) -> f64 {
        self.std.max(eps)
    }
}

/// Z-scores with population statistics; `eps` bounds the divisor from below.
pub fn standardize(x: &[f64], eps: f64) -> Result<Standardized> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("standardize an empty vector".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mu = mean(x);
    let sigma = population_std(x);
    let scale = sigma.max(eps);
    Ok(Standardized {
        values: x.iter().map(|v| (v - mu) / scale).collect(),
        mean: mu,
        std: sigma,
    })
}
