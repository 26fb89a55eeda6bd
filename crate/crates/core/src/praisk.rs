//! Iterated Prais-Winsten feasible GLS for AR(k) errors.
//!
//! Each iteration estimates the AR coefficients from pooled Yule-Walker
//! cross-products of the current untransformed residuals, whitens every
//! segment with the exact AR(k) transformation (keeping the first `k`
//! observations through the initialisation block `L0`) and refits by least
//! squares. Iteration stops once no coefficient moves by `tol` or more.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dgp::spectral_radius;
use crate::error::{Error, Result};
use crate::model::{build_design, DesignMatrix, FitResult, Method, Panel};
use crate::olsnw::{residuals, LeastSquares};

/// Radius that non-stationary iterates are shrunk to.
pub const SHRINK_TARGET: f64 = 0.998;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PwConfig {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub enforce_stationarity: bool,
}

impl Default for PwConfig {
    fn default() -> Self {
        Self {
            k: 1,
            tol: 1e-6,
            max_iter: 100,
            enforce_stationarity: true,
        }
    }
}

impl PwConfig {
    pub fn with_order(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::EmptyOrder);
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Pooled Yule-Walker normal equations `A rho = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct YwSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Accumulates `b[j] = sum_t u_t u_{t-j}` and
/// `A[i][j] = sum_{t > max(i,j)} u_{t-i} u_{t-j}` within each segment and
/// solves the pooled system by LU. Segments no longer than `k` contribute
/// nothing.
pub fn yule_walker_pool(resid: &[f64], segments: &[Range<usize>], k: usize) -> Result<(Vec<f64>, YwSystem)> {
    if k == 0 {
        return Err(Error::EmptyOrder);
    }
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    let mut used = 0;
    for seg in segments {
        let u = &resid[seg.clone()];
        let n = u.len();
        if n <= k {
            continue;
        }
        used += 1;
        for j in 1..=k {
            b[j - 1] += (j..n).map(|t| u[t] * u[t - j]).sum::<f64>();
            for i in 1..=j {
                let v: f64 = (j..n).map(|t| u[t - i] * u[t - j]).sum();
                a[(i - 1, j - 1)] += v;
                if i != j {
                    a[(j - 1, i - 1)] += v;
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::AllSegmentsTooShort { k });
    }
    let scale = a.diagonal().amax();
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::SingularSystem);
    }
    let lu = a.clone().lu();
    let u_diag = lu.u().diagonal();
    if u_diag.iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::SingularSystem);
    }
    let rho = lu.solve(&b).ok_or(Error::SingularSystem)?;
    Ok((rho.iter().copied().collect(), YwSystem { a, b }))
}

/// Autocovariances `gamma(0..=max_lag)` of the stationary AR process with
/// innovation standard deviation `sigma`.
pub fn ar_autocovariances(rho: &[f64], sigma: f64, max_lag: usize) -> Result<Vec<f64>> {
    let k = rho.len();
    let s2 = sigma * sigma;
    if k == 0 {
        let mut g = vec![0.0; max_lag + 1];
        g[0] = s2;
        return Ok(g);
    }
    let radius = spectral_radius(rho);
    if radius >= 1.0 {
        return Err(Error::NonStationary { radius });
    }
    // gamma(l) - sum_j rho_j gamma(|l - j|) = s2 * [l == 0], l = 0..=k
    let mut m = DMatrix::<f64>::identity(k + 1, k + 1);
    for l in 0..=k {
        for (j, r) in rho.iter().enumerate() {
            let lag = (l as isize - (j as isize + 1)).unsigned_abs();
            m[(l, lag)] -= r;
        }
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[0] = s2;
    let head = m.lu().solve(&rhs).ok_or(Error::NonStationary { radius })?;
    let mut g: Vec<f64> = head.iter().copied().collect();
    while g.len() <= max_lag {
        let l = g.len();
        let v = rho.iter().enumerate().map(|(j, r)| r * g[l - j - 1]).sum();
        g.push(v);
    }
    g.truncate(max_lag + 1);
    Ok(g)
}

/// `V_k`: autocovariance matrix of `k` consecutive values for unit
/// innovation variance.
pub fn unit_autocov_matrix(rho: &[f64]) -> Result<DMatrix<f64>> {
    let k = rho.len();
    let g = ar_autocovariances(rho, 1.0, k.saturating_sub(1))?;
    Ok(DMatrix::from_fn(k, k, |i, j| g[i.abs_diff(j)]))
}

/// Closed-form `V_k^{-1} = A'A - B'B` with `A` lower-triangular Toeplitz on
/// `(1, -rho_1, .., -rho_{k-1})` and `B` lower-triangular Toeplitz on
/// `(rho_k, .., rho_1)`.
pub fn unit_autocov_inverse_closed_form(rho: &[f64]) -> DMatrix<f64> {
    let k = rho.len();
    let a = DMatrix::from_fn(k, k, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => -rho[i - j - 1],
    });
    let b = DMatrix::from_fn(k, k, |i, j| if i >= j { rho[k - 1 - (i - j)] } else { 0.0 });
    a.transpose() * &a - b.transpose() * &b
}

fn reverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    DMatrix::from_fn(k, k, |i, j| m[(k - 1 - i, k - 1 - j)])
}

/// Initialisation block `L0`: lower-triangular with `L0' L0 = V_k^{-1}`,
/// obtained from the Cholesky factor of the order-reversed inverse.
pub fn init_block(rho: &[f64]) -> Result<DMatrix<f64>> {
    let k = rho.len();
    if k == 0 {
        return Err(Error::EmptyOrder);
    }
    let v = unit_autocov_matrix(rho)?;
    let v_inv = v
        .cholesky()
        .ok_or(Error::CholeskyFailure("autocovariance matrix is not positive definite"))?
        .inverse();
    let chol = reverse(&v_inv)
        .cholesky()
        .ok_or(Error::CholeskyFailure("inverse autocovariance matrix is not positive definite"))?;
    Ok(reverse(&chol.l().transpose()))
}

/// The exact AR(k) whitening transformation of one segment, stored as
/// `L0` plus the AR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningOperator {
    pub l0: DMatrix<f64>,
    pub rho: Vec<f64>,
}

impl WhiteningOperator {
    pub fn new(rho: &[f64]) -> Result<Self> {
        let l0 = if rho.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            init_block(rho)?
        };
        Ok(Self { l0, rho: rho.to_vec() })
    }

    pub fn order(&self) -> usize {
        self.rho.len()
    }

    /// Applies the operator to `input`, writing into `out`. Both have the
    /// segment length, which must exceed the AR order.
    pub fn apply_into<I, O>(&self, n: usize, input: I, mut out: O)
    where
        I: Fn(usize) -> f64,
        O: FnMut(usize, f64),
    {
        let k = self.order();
        for i in 0..k.min(n) {
            let v = (0..=i).map(|j| self.l0[(i, j)] * input(j)).sum();
            out(i, v);
        }
        for t in k..n {
            let mut v = input(t);
            for (j, r) in self.rho.iter().enumerate() {
                v -= r * input(t - j - 1);
            }
            out(t, v);
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v.len(), |t| v[t], |t, x| out[t] = x);
        out
    }

    /// The full `n x n` lower-triangular matrix.
    pub fn dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            self.apply_into(n, |t| if t == c { 1.0 } else { 0.0 }, |t, x| m[(t, c)] = x);
        }
        m
    }
}

/// Whitens one segment's outcome and regressors.
pub fn pw_transform(y: &[f64], x: &DMatrix<f64>, rho: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::LengthMismatch(x.nrows(), n));
    }
    if n <= rho.len() {
        return Err(Error::SegmentTooShort {
            segment: 0,
            len: n,
            k: rho.len(),
        });
    }
    let op = WhiteningOperator::new(rho)?;
    let yr = op.apply(y);
    let mut xr = DMatrix::<f64>::zeros(n, x.ncols());
    for c in 0..x.ncols() {
        op.apply_into(n, |t| x[(t, c)], |t, v| xr[(t, c)] = v);
    }
    Ok((yr, xr))
}

fn transform_all(
    op: &WhiteningOperator,
    segments: &[Range<usize>],
    x: &DMatrix<f64>,
    y: &[f64],
) -> (DMatrix<f64>, Vec<f64>) {
    let mut xr = DMatrix::<f64>::zeros(x.nrows(), x.ncols());
    let mut yr = vec![0.0; y.len()];
    for seg in segments {
        let s = seg.start;
        let n = seg.len();
        op.apply_into(n, |t| y[s + t], |t, v| yr[s + t] = v);
        for c in 0..x.ncols() {
            op.apply_into(n, |t| x[(s + t, c)], |t, v| xr[(s + t, c)] = v);
        }
    }
    (xr, yr)
}

/// Scales the roots of the AR polynomial by `target / radius`, which maps
/// `rho_j` to `rho_j c^j`.
pub fn shrink_to_radius(rho: &[f64], target: f64) -> Vec<f64> {
    let radius = spectral_radius(rho);
    if radius <= target {
        return rho.to_vec();
    }
    let c = target / radius;
    rho.iter()
        .enumerate()
        .map(|(j, r)| r * c.powi(j as i32 + 1))
        .collect()
}

pub fn fit_pw_design(design: &DesignMatrix, y: &[f64], cfg: &PwConfig) -> Result<FitResult> {
    cfg.validate()?;
    let k = cfg.k;
    let x = &design.rows;
    if y.len() != x.nrows() {
        return Err(Error::LengthMismatch(x.nrows(), y.len()));
    }
    for (i, seg) in design.segments.iter().enumerate() {
        if seg.len() <= k {
            return Err(Error::SegmentTooShort {
                segment: i,
                len: seg.len(),
                k,
            });
        }
    }

    let ols = LeastSquares::new(x)?;
    let mut beta = ols.solve(y);
    let mut u = residuals(x, y, &beta);
    let mut rho = vec![0.0; k];
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(YwSystem, DMatrix<f64>, Vec<f64>, LeastSquares)> = None;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (mut rho_new, sys) = yule_walker_pool(&u, &design.segments, k)?;
        let radius = spectral_radius(&rho_new);
        if radius >= 1.0 {
            if !cfg.enforce_stationarity {
                return Err(Error::NonStationaryIterate {
                    radius,
                    iteration: iterations,
                });
            }
            rho_new = shrink_to_radius(&rho_new, SHRINK_TARGET);
        }
        let delta = rho_new
            .iter()
            .zip(&rho)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rho = rho_new;

        let op = WhiteningOperator::new(&rho)?;
        let (xr, yr) = transform_all(&op, &design.segments, x, y);
        let ls = LeastSquares::new(&xr)?;
        beta = ls.solve(&yr);
        u = residuals(x, y, &beta);
        last = Some((sys, xr, yr, ls));
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    let (sys, xr, yr, ls) = last.expect("at least one iteration");
    let e = residuals(&xr, &yr, &beta);
    let n = y.len();
    let dof = n.saturating_sub(x.ncols()).max(1);
    let s2 = e.iter().map(|v| v * v).sum::<f64>() / dof as f64;
    let cov = ls.xtx_inv() * s2;
    let a_inv = sys
        .a
        .clone()
        .try_inverse()
        .ok_or(Error::SingularSystem)?;
    let rho_cov = a_inv * s2;

    let mut fit = FitResult::from_parts(Method::Pw, &beta, &cov, n);
    fit.rho_hat = Some(rho);
    fit.rho_cov = Some(
        (0..k)
            .map(|i| (0..k).map(|j| rho_cov[(i, j)]).collect())
            .collect(),
    );
    fit.iterations = Some(iterations);
    fit.converged = Some(converged);
    if converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged {
            iterations,
            fit: Box::new(fit),
        })
    }
}

pub fn fit_pw(panel: &Panel, intervention: i64, cfg: &PwConfig) -> Result<FitResult> {
    let design = build_design(panel, intervention)?;
    fit_pw_design(&design, &panel.y(), cfg)
}
