//! The multiple-group interrupted time series regression.
//!
//! ```text
//! y = b0 + b1*T + b2*X + b3*X*T + b4*Z + b5*Z*T + b6*Z*X + b7*Z*X*T + e
//! ```
//!
//! `T` is the raw period index (1-based), `X` the post-intervention dummy and
//! `Z` the treated-unit dummy. `b0..b3` describe the controls, `b4..b7` the
//! treated unit's departures from them; `b6` and `b7` are the
//! difference-in-differences in level and in trend.

use std::collections::HashMap;
use std::ops::{Index, Range};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Number of regression coefficients.
pub const N_COEF: usize = 8;

pub const COEF_LABELS: [&str; N_COEF] = [
    "_cons", "_t", "_x", "_x_t", "_z", "_z_t", "_z_x", "_z_x_t",
];

/// Index of the difference-in-differences in level.
pub const DID_LEVEL: usize = 6;
/// Index of the difference-in-differences in trend.
pub const DID_TREND: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub unit_id: i64,
    pub t: i64,
    pub y: f64,
    pub is_treated_unit: bool,
    pub is_post: bool,
}

/// One contiguous within-unit series inside a [`Panel`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub unit_id: i64,
    pub rows: Range<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Stacked unit-by-time observations. Each unit occupies one contiguous
/// block of rows ordered by `t` with unit steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    rows: Vec<PanelRow>,
    segments: Vec<Segment>,
}

impl Panel {
    pub fn new(rows: Vec<PanelRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let mut segments: Vec<Segment> = Vec::new();
        let mut seen: HashMap<i64, usize> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            match segments.last_mut() {
                Some(seg) if seg.unit_id == row.unit_id => {
                    let prev = &rows[i - 1];
                    if row.t != prev.t + 1 {
                        return Err(Error::InvalidPanel(format!(
                            "unit {}: t jumps from {} to {} (row {})",
                            row.unit_id,
                            prev.t,
                            row.t,
                            i + 1
                        )));
                    }
                    if row.is_treated_unit != prev.is_treated_unit {
                        return Err(Error::InvalidPanel(format!(
                            "unit {}: treated flag changes at t = {}",
                            row.unit_id, row.t
                        )));
                    }
                    if prev.is_post && !row.is_post {
                        return Err(Error::InvalidPanel(format!(
                            "unit {}: post flag decreases at t = {}",
                            row.unit_id, row.t
                        )));
                    }
                    seg.rows.end = i + 1;
                }
                _ => {
                    if seen.insert(row.unit_id, segments.len()).is_some() {
                        return Err(Error::InvalidPanel(format!(
                            "unit {} is not stored contiguously (row {})",
                            row.unit_id,
                            i + 1
                        )));
                    }
                    segments.push(Segment {
                        unit_id: row.unit_id,
                        rows: i..i + 1,
                    });
                }
            }
        }
        let treated = segments
            .iter()
            .filter(|s| rows[s.rows.start].is_treated_unit)
            .count();
        if treated != 1 {
            return Err(Error::InvalidPanel(format!(
                "expected exactly one treated unit, found {treated}"
            )));
        }
        Ok(Self { rows, segments })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    pub fn treated_unit(&self) -> i64 {
        self.segments
            .iter()
            .find(|s| self.rows[s.rows.start].is_treated_unit)
            .map(|s| s.unit_id)
            .expect("validated on construction")
    }

    /// Observed period range across all units.
    pub fn time_range(&self) -> (i64, i64) {
        let lo = self.rows.iter().map(|r| r.t).min().unwrap_or(0);
        let hi = self.rows.iter().map(|r| r.t).max().unwrap_or(0);
        (lo, hi)
    }

    /// First period flagged as post-intervention, if the flags agree across
    /// units.
    pub fn intervention_from_flags(&self) -> Option<i64> {
        let mut found: Option<i64> = None;
        for seg in &self.segments {
            let first = self.rows[seg.rows.clone()]
                .iter()
                .find(|r| r.is_post)
                .map(|r| r.t)?;
            match found {
                None => found = Some(first),
                Some(t) if t == first => {}
                Some(_) => return None,
            }
        }
        found
    }

    /// Returns a copy with `f` applied to every outcome.
    pub fn map_y(&self, f: impl Fn(f64) -> f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| PanelRow { y: f(r.y), ..*r })
            .collect();
        Self {
            rows,
            segments: self.segments.clone(),
        }
    }
}

/// The N x 8 regressor matrix together with row bookkeeping.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub rows: DMatrix<f64>,
    pub row_unit: Vec<i64>,
    pub row_time: Vec<i64>,
    pub segments: Vec<Range<usize>>,
}

impl DesignMatrix {
    pub fn n_obs(&self) -> usize {
        self.rows.nrows()
    }

    pub fn min_segment_len(&self) -> usize {
        self.segments.iter().map(|s| s.len()).min().unwrap_or(0)
    }
}

/// Regressor row for one observation.
pub fn design_row(t: i64, post: bool, treated: bool) -> [f64; N_COEF] {
    let t = t as f64;
    let x = if post { 1.0 } else { 0.0 };
    let z = if treated { 1.0 } else { 0.0 };
    [1.0, t, x, x * t, z, z * t, z * x, z * x * t]
}

pub fn build_design(panel: &Panel, intervention_time: i64) -> Result<DesignMatrix> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let (t_min, t_max) = panel.time_range();
    for seg in panel.segments() {
        let rows = &panel.rows()[seg.rows.clone()];
        if rows[0].t != t_min {
            return Err(Error::MissingObservation {
                unit_id: seg.unit_id,
                t: t_min,
            });
        }
        let last = rows[rows.len() - 1].t;
        if last != t_max {
            return Err(Error::MissingObservation {
                unit_id: seg.unit_id,
                t: last + 1,
            });
        }
    }
    let n_pre = intervention_time - t_min;
    let n_post = t_max - intervention_time + 1;
    if n_pre <= 0 || n_post <= 0 {
        let which = if n_post <= 0 { "pre" } else { "post" };
        return Err(Error::DegenerateDesign(format!(
            "all rows are {which}-intervention (intervention at t = {intervention_time}, periods {t_min}..{t_max})"
        )));
    }
    if n_pre < 2 || n_post < 2 {
        return Err(Error::DegenerateDesign(format!(
            "need at least 2 pre and 2 post periods, have {n_pre} and {n_post}"
        )));
    }

    let n = panel.len();
    let mut m = DMatrix::<f64>::zeros(n, N_COEF);
    let mut row_unit = Vec::with_capacity(n);
    let mut row_time = Vec::with_capacity(n);
    for (i, r) in panel.rows().iter().enumerate() {
        let x = design_row(r.t, r.t >= intervention_time, r.is_treated_unit);
        for (j, v) in x.iter().enumerate() {
            m[(i, j)] = *v;
        }
        row_unit.push(r.unit_id);
        row_time.push(r.t);
    }
    Ok(DesignMatrix {
        rows: m,
        row_unit,
        row_time,
        segments: panel.segments().iter().map(|s| s.rows.clone()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoefVector(pub [f64; N_COEF]);

impl CoefVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn did_level(&self) -> f64 {
        self.0[DID_LEVEL]
    }

    pub fn did_trend(&self) -> f64 {
        self.0[DID_TREND]
    }
}

impl Index<usize> for CoefVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "olsnw")]
    OlsNw,
    Pw,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::OlsNw => "OLS-NW",
            Method::Pw => "PW",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Method::OlsNw => "olsnw",
            Method::Pw => "pw",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "olsnw" | "ols_nw" | "ols-nw" | "nw" => Ok(Method::OlsNw),
            "pw" | "prais" | "praisk" => Ok(Method::Pw),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Output of either estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub beta: CoefVector,
    pub cov: [[f64; N_COEF]; N_COEF],
    pub se: [f64; N_COEF],
    pub n_obs: usize,
    pub df: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag_used: Option<usize>,
}

impl FitResult {
    pub(crate) fn from_parts(
        method: Method,
        beta: &[f64],
        cov: &DMatrix<f64>,
        n_obs: usize,
    ) -> Self {
        let mut b = [0.0; N_COEF];
        b.copy_from_slice(&beta[..N_COEF]);
        let mut c = [[0.0; N_COEF]; N_COEF];
        let mut se = [0.0; N_COEF];
        for i in 0..N_COEF {
            for j in 0..N_COEF {
                // symmetrise away rounding noise from the sandwich products
                c[i][j] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            }
            se[i] = c[i][i].max(0.0).sqrt();
        }
        Self {
            method,
            beta: CoefVector(b),
            cov: c,
            se,
            n_obs,
            df: n_obs.saturating_sub(N_COEF),
            rho_hat: None,
            rho_cov: None,
            iterations: None,
            converged: None,
            lag_used: None,
        }
    }

    /// Standard errors of the AR coefficients, when present.
    pub fn rho_se(&self) -> Option<Vec<f64>> {
        self.rho_cov
            .as_ref()
            .map(|c| (0..c.len()).map(|i| c[i][i].max(0.0).sqrt()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub estimate: f64,
    pub se: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub df: usize,
    pub rejected: bool,
}

/// Two-sided critical value of Student's t.
pub fn t_critical(alpha: f64, df: usize) -> f64 {
    students_t(df).inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided p-value of a t statistic.
pub fn t_p_value(statistic: f64, df: usize) -> f64 {
    (2.0 * students_t(df).sf(statistic.abs())).clamp(0.0, 1.0)
}

fn students_t(df: usize) -> StudentsT {
    StudentsT::new(0.0, 1.0, df.max(1) as f64).expect("positive degrees of freedom")
}

pub fn wald_test(fit: &FitResult, coef_index: usize, null_value: f64, alpha: f64) -> Result<WaldResult> {
    if coef_index >= N_COEF {
        return Err(Error::CoefIndex(coef_index));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let estimate = fit.beta[coef_index];
    let se = fit.se[coef_index];
    if !se.is_finite() || se <= 0.0 {
        return Err(Error::ZeroVariance { index: coef_index });
    }
    let df = fit.df.max(1);
    let statistic = (estimate - null_value) / se;
    let p_value = t_p_value(statistic, df);
    let half = t_critical(alpha, df) * se;
    Ok(WaldResult {
        estimate,
        se,
        statistic,
        p_value,
        ci_low: estimate - half,
        ci_high: estimate + half,
        df,
        rejected: p_value < alpha,
    })
}

pub fn did_level(fit: &FitResult, alpha: f64) -> Result<WaldResult> {
    wald_test(fit, DID_LEVEL, 0.0, alpha)
}

pub fn did_trend(fit: &FitResult, alpha: f64) -> Result<WaldResult> {
    wald_test(fit, DID_TREND, 0.0, alpha)
}
