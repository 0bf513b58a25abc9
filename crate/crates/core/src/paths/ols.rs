//! Least squares by Householder QR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_sf;

/// Relative tolerance below which a column counts as linearly dependent.
const RANK_TOL: f64 = 1e-10;

/// Residual variance used for coefficient standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMode {
    /// RSS / n, the maximum-likelihood convention.
    #[default]
    Ml,
    /// RSS / (n - p).
    Ols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub rss: f64,
    /// Always RSS / n.
    pub residual_variance: f64,
    pub n: usize,
    pub se_mode: SeMode,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }
}

/// Upper-triangular factor, coefficients and residual sum of squares.
pub(crate) struct QrSolution {
    pub beta: Vec<f64>,
    /// Row-major p x p.
    pub r: Vec<f64>,
    pub rss: f64,
}

/// Solves min ||y - X b|| where `columns` are the columns of X.
pub(crate) fn qr_solve(y: &[f64], columns: &[(&str, &[f64])]) -> Result<QrSolution> {
    let n = y.len();
    let p = columns.len();
    if p == 0 {
        return Err(Error::invalid("design matrix has no columns"));
    }
    if let Some((name, c)) = columns.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::invalid(format!(
            "column {name} has {} rows, response has {n}",
            c.len()
        )));
    }
    if n < p + 1 {
        return Err(Error::invalid(format!(
            "{n} rows is too few for {p} columns"
        )));
    }
    if y.iter()
        .chain(columns.iter().flat_map(|(_, c)| c.iter()))
        .any(|v| !v.is_finite())
    {
        return Err(Error::invalid(
            "design or response contains non-finite values",
        ));
    }

    let mut a: Vec<Vec<f64>> = columns.iter().map(|(_, c)| c.to_vec()).collect();
    let mut qty = y.to_vec();
    let mut r = vec![0.0; p * p];
    let mut dependent = Vec::new();
    let mut k = 0;
    for j in 0..p {
        let orig = norm(columns[j].1);
        let tail = norm(&a[j][k..]);
        if orig == 0.0 || tail <= RANK_TOL * orig {
            dependent.push(columns[j].0.to_string());
            continue;
        }
        let x0 = a[j][k];
        let alpha = if x0 >= 0.0 { -tail } else { tail };
        let mut v = a[j][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for col in a.iter_mut().skip(j).chain(std::iter::once(&mut qty)) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        for (i, col) in a.iter().enumerate().skip(j) {
            r[k * p + i] = col[k];
        }
        k += 1;
    }
    if !dependent.is_empty() {
        return Err(Error::Collinearity { columns: dependent });
    }

    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|j| r[i * p + j] * beta[j]).sum();
        beta[i] = (qty[i] - s) / r[i * p + i];
    }
    let rss = qty[p..].iter().map(|x| x * x).sum();
    Ok(QrSolution { beta, r, rss })
}

fn norm(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

/// Diagonal of (R^T R)^-1 from the upper-triangular R.
fn inverse_gram_diag(r: &[f64], p: usize) -> Vec<f64> {
    let mut rinv = vec![0.0; p * p];
    for j in 0..p {
        rinv[j * p + j] = 1.0 / r[j * p + j];
        for i in (0..j).rev() {
            let s: f64 = ((i + 1)..=j).map(|m| r[i * p + m] * rinv[m * p + j]).sum();
            rinv[i * p + j] = -s / r[i * p + i];
        }
    }
    (0..p)
        .map(|i| (i..p).map(|j| rinv[i * p + j].powi(2)).sum())
        .collect()
}

/// Ordinary least squares with z-test p-values. Columns are used as given,
/// so include an intercept column when one is wanted.
pub fn fit_ols(y: &[f64], columns: &[(&str, &[f64])], se_mode: SeMode) -> Result<OlsFit> {
    let n = y.len();
    let p = columns.len();
    let sol = qr_solve(y, columns)?;
    let residual_variance = sol.rss / n as f64;
    let sigma2 = match se_mode {
        SeMode::Ml => residual_variance,
        SeMode::Ols => sol.rss / (n - p) as f64,
    };
    let diag = inverse_gram_diag(&sol.r, p);
    let std_errors: Vec<f64> = diag.iter().map(|d| (sigma2 * d).sqrt()).collect();
    let z_values: Vec<f64> = sol
        .beta
        .iter()
        .zip(&std_errors)
        .map(|(b, s)| b / s)
        .collect();
    let p_values = sol
        .beta
        .iter()
        .zip(&std_errors)
        .map(|(&b, &s)| z_test_p(b, s))
        .collect();
    Ok(OlsFit {
        names: columns.iter().map(|(n, _)| n.to_string()).collect(),
        coefficients: sol.beta,
        std_errors,
        z_values,
        p_values,
        rss: sol.rss,
        residual_variance,
        n,
        se_mode,
    })
}

/// Two-sided normal p-value for an estimate and its standard error.
pub fn z_test_p(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    (2.0 * normal_sf((estimate / se).abs())).min(1.0)
}
