//! OLS with Newey-West (Bartlett kernel) HAC covariance.
//!
//! The long-run score covariance is accumulated within segments only: a
//! lagged product `e_t e_{t-j} x_t x_{t-j}'` contributes when both rows
//! belong to the same unit.

use std::ops::Range;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_design, DesignMatrix, FitResult, Method, Panel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HacConfig {
    /// Fixed lag truncation; `None` selects it from the series length.
    pub lag: Option<usize>,
    /// Multiply the covariance by `N / (N - 8)`.
    pub small_sample_adjust: bool,
}

impl Default for HacConfig {
    fn default() -> Self {
        Self {
            lag: None,
            small_sample_adjust: true,
        }
    }
}

/// A least-squares problem factored once by Householder QR.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    r: DMatrix<f64>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl LeastSquares {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let p = x.ncols();
        if x.nrows() < p {
            return Err(Error::RankDeficient);
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let col_scale = (0..p)
            .map(|j| x.column(j).norm())
            .fold(0.0, f64::max)
            .max(1.0);
        if scale == 0.0
            || (0..p).any(|i| r[(i, i)].abs() <= 1e-11 * col_scale * (x.nrows() as f64).sqrt())
        {
            return Err(Error::RankDeficient);
        }
        Ok(Self { r, qr })
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let p = self.r.ncols();
        let mut qty = DVector::from_column_slice(y);
        self.qr.q_tr_mul(&mut qty);
        let rhs = qty.rows(0, p).into_owned();
        let beta = self
            .r
            .solve_upper_triangular(&rhs)
            .expect("nonsingular R checked on construction");
        beta.iter().copied().collect()
    }

    /// `(X'X)^{-1} = R^{-1} R^{-T}`.
    pub fn xtx_inv(&self) -> DMatrix<f64> {
        let p = self.r.ncols();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("nonsingular R checked on construction");
        &r_inv * r_inv.transpose()
    }
}

pub fn residuals(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let b = DVector::from_column_slice(beta);
    let fitted = x * b;
    y.iter().zip(fitted.iter()).map(|(a, f)| a - f).collect()
}

/// OLS coefficients and residuals.
pub fn ols_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    let ls = LeastSquares::new(x)?;
    let beta = ls.solve(y);
    let e = residuals(x, y, &beta);
    Ok((beta, e))
}

/// Automatic lag rule `floor(4 (T/100)^(2/9))`.
pub fn nw_bandwidth(series_len: usize) -> usize {
    (4.0 * (series_len as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

pub fn bartlett_weight(j: usize, lag: usize) -> f64 {
    1.0 - j as f64 / (lag as f64 + 1.0)
}

/// `N * S_hat`: the Bartlett-weighted sum of score autocovariances, with
/// lagged pairs restricted to a single segment.
pub fn long_run_score_sum(
    x: &DMatrix<f64>,
    resid: &[f64],
    lag: usize,
    segments: &[Range<usize>],
) -> DMatrix<f64> {
    let p = x.ncols();
    let n = x.nrows();
    // scores s_t = e_t x_t, one column per observation
    let mut scores = DMatrix::<f64>::zeros(p, n);
    for t in 0..n {
        for j in 0..p {
            scores[(j, t)] = resid[t] * x[(t, j)];
        }
    }
    let mut s = &scores * scores.transpose();
    for l in 1..=lag {
        let w = bartlett_weight(l, lag);
        let mut g = DMatrix::<f64>::zeros(p, p);
        for seg in segments {
            if seg.len() <= l {
                continue;
            }
            let cur = scores.columns(seg.start + l, seg.len() - l);
            let prev = scores.columns(seg.start, seg.len() - l);
            g += cur * prev.transpose();
        }
        s += (&g + g.transpose()) * w;
    }
    s
}

fn sandwich(xtx_inv: &DMatrix<f64>, meat: &DMatrix<f64>) -> DMatrix<f64> {
    xtx_inv * meat * xtx_inv
}

/// Newey-West covariance of the OLS coefficients.
pub fn nw_cov(
    x: &DMatrix<f64>,
    resid: &[f64],
    lag: usize,
    segments: &[Range<usize>],
    small_sample_adjust: bool,
) -> Result<DMatrix<f64>> {
    let ls = LeastSquares::new(x)?;
    nw_cov_with(&ls.xtx_inv(), x, resid, lag, segments, small_sample_adjust)
}

fn nw_cov_with(
    xtx_inv: &DMatrix<f64>,
    x: &DMatrix<f64>,
    resid: &[f64],
    lag: usize,
    segments: &[Range<usize>],
    small_sample_adjust: bool,
) -> Result<DMatrix<f64>> {
    if resid.len() != x.nrows() {
        return Err(Error::LengthMismatch(x.nrows(), resid.len()));
    }
    let min_len = segments.iter().map(|s| s.len()).min().unwrap_or(0);
    if lag >= min_len {
        return Err(Error::BandwidthTooLarge { lag, min_len });
    }
    let meat = long_run_score_sum(x, resid, lag, segments);
    let mut cov = sandwich(xtx_inv, &meat);
    if small_sample_adjust {
        let n = x.nrows() as f64;
        cov *= n / (n - x.ncols() as f64);
    }
    Ok(cov)
}

/// Resolves the lag: explicit values are checked, the automatic rule is
/// computed from the within-unit length and clamped below it.
pub fn resolve_lag(hac: &HacConfig, series_len: usize) -> Result<usize> {
    match hac.lag {
        Some(l) if l >= series_len => Err(Error::BandwidthTooLarge {
            lag: l,
            min_len: series_len,
        }),
        Some(l) => Ok(l),
        None => {
            let l = nw_bandwidth(series_len);
            if l >= series_len {
                let clamped = series_len.saturating_sub(1);
                warn!("automatic Newey-West lag {l} clamped to {clamped} for series length {series_len}");
                Ok(clamped)
            } else {
                Ok(l)
            }
        }
    }
}

pub fn fit_ols_nw_design(design: &DesignMatrix, y: &[f64], hac: &HacConfig) -> Result<FitResult> {
    if design.n_obs() != y.len() {
        return Err(Error::LengthMismatch(design.n_obs(), y.len()));
    }
    let lag = resolve_lag(hac, design.min_segment_len())?;
    let ls = LeastSquares::new(&design.rows)?;
    let beta = ls.solve(y);
    let e = residuals(&design.rows, y, &beta);
    let cov = nw_cov_with(
        &ls.xtx_inv(),
        &design.rows,
        &e,
        lag,
        &design.segments,
        hac.small_sample_adjust,
    )?;
    let mut fit = FitResult::from_parts(Method::OlsNw, &beta, &cov, y.len());
    fit.lag_used = Some(lag);
    Ok(fit)
}

pub fn fit_ols_nw(panel: &Panel, intervention: i64, hac: &HacConfig) -> Result<FitResult> {
    let design = build_design(panel, intervention)?;
    fit_ols_nw_design(&design, &panel.y(), hac)
}

/// Classical (iid) OLS covariance `s^2 (X'X)^{-1}`.
pub fn ols_classical_cov(x: &DMatrix<f64>, resid: &[f64]) -> Result<DMatrix<f64>> {
    let ls = LeastSquares::new(x)?;
    let dof = x.nrows().saturating_sub(x.ncols()).max(1);
    let s2 = resid.iter().map(|e| e * e).sum::<f64>() / dof as f64;
    Ok(ls.xtx_inv() * s2)
}
