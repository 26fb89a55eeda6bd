//! Monte Carlo evaluation of the two estimators.
//!
//! A [`SimCondition`] fixes one data-generating scenario, the coefficient
//! under test and the fitted AR order. Replication `r` of a condition draws
//! its panel from a seed derived from `(base_seed, data key, r)`, so results
//! do not depend on scheduling or thread count. Conditions that differ only
//! in the fitted order or the method list share their datasets.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{derive_seed, gen_panel_with_seed, ArSpec, Intervention, ScenarioConfig};
use crate::error::{Error, Result};
use crate::model::{build_design, t_critical, Method, DID_LEVEL, DID_TREND, N_COEF};
use crate::olsnw::{fit_ols_nw_design, HacConfig};
use crate::praisk::{fit_pw_design, PwConfig};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Level,
    Trend,
}

impl EffectKind {
    pub fn coef_index(self) -> usize {
        match self {
            EffectKind::Level => DID_LEVEL,
            EffectKind::Trend => DID_TREND,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            EffectKind::Level => "level",
            EffectKind::Trend => "trend",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Primary,
    Sensitivity,
    Misspecification,
}

impl Mode {
    pub fn key(self) -> &'static str {
        match self {
            Mode::Primary => "primary",
            Mode::Sensitivity => "sensitivity",
            Mode::Misspecification => "misspecification",
        }
    }
}

/// How the Newey-West lag is chosen in a simulation condition.
///
/// The default matches the lag to the AR order assumed by the analyst
/// (the Prais-Winsten fit order). The automatic bandwidth is badly
/// downward biased here: the residuals of the segment-wise trend fit are
/// negatively autocorrelated, and with `L = 4` at `T = 100` even iid data
/// give a Type I error near 8%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NwLag {
    Auto,
    #[default]
    FitOrder,
    Fixed(usize),
}

impl Serialize for NwLag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NwLag::Auto => s.serialize_str("auto"),
            NwLag::FitOrder => s.serialize_str("fit_order"),
            NwLag::Fixed(l) => s.serialize_u64(*l as u64),
        }
    }
}

impl<'de> Deserialize<'de> for NwLag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Fixed(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Fixed(l) => Ok(NwLag::Fixed(l as usize)),
            Raw::Name(n) if n == "auto" => Ok(NwLag::Auto),
            Raw::Name(n) if n == "fit_order" => Ok(NwLag::FitOrder),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "nw_lag must be \"auto\", \"fit_order\" or an integer, got \"{n}\""
            ))),
        }
    }
}

/// The named autocorrelation scenarios of the simulation design.
pub fn named_scenario(ar_order: usize, name: &str) -> Option<Vec<f64>> {
    let rho: &[f64] = match (ar_order, name) {
        (0, "iid") => &[],
        (1, "mild") => &[0.4],
        (1, "oscillatory") => &[-0.4],
        (1, "persistent") => &[0.7],
        (2, "mild") => &[0.4, 0.2],
        (2, "oscillatory") => &[0.5, -0.4],
        (2, "persistent") => &[0.7, 0.2],
        (3, "mild") => &[0.4, 0.2, 0.1],
        (3, "oscillatory") => &[0.7, -0.3, 0.15],
        (3, "persistent") => &[0.6, 0.25, 0.1],
        _ => return None,
    };
    Some(rho.to_vec())
}

pub fn scenario_names(ar_order: usize) -> &'static [&'static str] {
    if ar_order == 0 {
        &["iid"]
    } else {
        &["mild", "oscillatory", "persistent"]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCondition {
    pub mode: Mode,
    pub scenario_name: String,
    pub scenario: ScenarioConfig,
    pub effect_kind: EffectKind,
    pub true_effect: f64,
    /// AR order used by Prais-Winsten.
    pub fit_order: usize,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub alpha: f64,
    pub base_seed: u64,
    pub nw_lag: NwLag,
    pub nw_small_sample_adjust: bool,
    pub pw: PwConfig,
}

impl SimCondition {
    /// Correctly specified condition for `scenario`, testing `effect_kind`
    /// against the scenario's own coefficient.
    pub fn new(scenario_name: &str, scenario: ScenarioConfig, effect_kind: EffectKind) -> Self {
        let true_effect = scenario.betas()[effect_kind.coef_index()];
        let fit_order = scenario.ar.order().max(1);
        Self {
            mode: Mode::Primary,
            scenario_name: scenario_name.to_string(),
            scenario,
            effect_kind,
            true_effect,
            fit_order,
            methods: vec![Method::OlsNw, Method::Pw],
            replications: 2000,
            alpha: 0.05,
            base_seed: 0,
            nw_lag: NwLag::default(),
            nw_small_sample_adjust: true,
            pw: PwConfig::with_order(fit_order),
        }
    }

    pub fn dgp_order(&self) -> usize {
        self.scenario.ar.order()
    }

    /// Identity of the data-generating process. Seeds derive from this, so
    /// it deliberately omits the mode, the fitted order and the methods.
    pub fn data_key(&self) -> String {
        let s = &self.scenario;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
        let inputs = [
            s.level_control,
            s.level_treated,
            s.trend_control,
            s.trend_treated,
            s.level_change_control,
            s.level_change_treated,
            s.post_trend_control,
            s.post_trend_treated,
        ];
        format!(
            "{}|{}|rho={}|sigma={:?}|T={}|m={}|t0={}|{}",
            self.scenario_name,
            self.effect_kind.key(),
            fmt(&s.ar.rho),
            s.ar.sigma,
            s.n_periods,
            s.n_controls,
            s.intervention_time(),
            fmt(&inputs),
        )
    }

    /// Key of the full condition, used for output files.
    pub fn key(&self) -> String {
        format!(
            "{}_ar{}_{}_{}_{}_T{}_fit{}",
            self.mode.key(),
            self.dgp_order(),
            self.scenario_name,
            self.effect_kind.key(),
            format_effect(self.true_effect),
            self.scenario.n_periods,
            self.fit_order
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let truth = self.scenario.betas()[self.effect_kind.coef_index()];
        if (truth - self.true_effect).abs() > 1e-9 * truth.abs().max(1.0) {
            return Err(Error::Config(format!(
                "true effect {} disagrees with the scenario's coefficient {truth}",
                self.true_effect
            )));
        }
        if self.replications < 2 {
            return Err(Error::Config("need at least 2 replications".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.fit_order == 0 {
            return Err(Error::EmptyOrder);
        }
        Ok(())
    }

    pub fn hac_config(&self) -> HacConfig {
        HacConfig {
            lag: match self.nw_lag {
                NwLag::Auto => None,
                NwLag::FitOrder => Some(self.fit_order),
                NwLag::Fixed(l) => Some(l),
            },
            small_sample_adjust: self.nw_small_sample_adjust,
        }
    }

    pub fn pw_config(&self) -> PwConfig {
        PwConfig {
            k: self.fit_order,
            ..self.pw.clone()
        }
    }
}

fn format_effect(v: f64) -> String {
    let s = format!("{v}");
    s.replace('-', "m")
}

/// Underspecified (or correctly specified) Prais-Winsten fit of an AR(k)
/// scenario. Overspecification is rejected.
pub fn misspec_condition(base: &SimCondition, fit_order: usize) -> Result<SimCondition> {
    let dgp = base.dgp_order();
    if fit_order == 0 || fit_order > dgp {
        return Err(Error::Config(format!(
            "fit order {fit_order} must lie in 1..={dgp} (overspecification is not supported)"
        )));
    }
    let mut c = base.clone();
    c.fit_order = fit_order;
    c.pw.k = fit_order;
    if fit_order != dgp {
        c.mode = Mode::Misspecification;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSummary {
    /// Rejection rate of `H0: effect = 0`: power, or the Type I error when
    /// the true effect is zero.
    pub power_or_type1: f64,
    pub coverage: f64,
    pub bias: f64,
    /// `100 * bias / truth`; the absolute bias when the truth is zero.
    pub pct_bias: f64,
    pub rmse: f64,
    pub empirical_se: f64,
    pub mean_model_se: f64,
    pub n_converged: usize,
    pub n_failed: usize,
}

/// Performance measures from per-replication estimates and model SEs.
pub fn summarize(estimates: &[f64], ses: &[f64], truth: f64, alpha: f64, df: usize) -> Result<PerfSummary> {
    if estimates.len() != ses.len() {
        return Err(Error::LengthMismatch(estimates.len(), ses.len()));
    }
    let r = estimates.len();
    if r < 2 {
        return Err(Error::EmptyInput);
    }
    let rf = r as f64;
    let crit = t_critical(alpha, df.max(1));
    let mut rejected = 0usize;
    let mut covered = 0usize;
    for (&est, &se) in estimates.iter().zip(ses) {
        if (est / se).abs() > crit {
            rejected += 1;
        }
        if (est - truth).abs() <= crit * se {
            covered += 1;
        }
    }
    let mean = estimates.iter().sum::<f64>() / rf;
    let bias = mean - truth;
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / rf;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (rf - 1.0);
    Ok(PerfSummary {
        power_or_type1: rejected as f64 / rf,
        coverage: covered as f64 / rf,
        bias,
        pct_bias: if truth != 0.0 { 100.0 * bias / truth } else { bias },
        rmse: mse.sqrt(),
        empirical_se: var.sqrt(),
        mean_model_se: ses.iter().sum::<f64>() / rf,
        n_converged: r,
        n_failed: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub summary: PerfSummary,
}

/// Estimate and SE of the target coefficient for one replication, per
/// requested method; `None` marks a failed fit.
fn replicate(cond: &SimCondition, rep: u64) -> Vec<Option<(f64, f64)>> {
    let seed = derive_seed(cond.base_seed, &cond.data_key(), rep);
    let idx = cond.effect_kind.coef_index();
    let panel = match gen_panel_with_seed(&cond.scenario, seed) {
        Ok(p) => p,
        Err(_) => return vec![None; cond.methods.len()],
    };
    let design = match build_design(&panel, cond.scenario.intervention_time()) {
        Ok(d) => d,
        Err(_) => return vec![None; cond.methods.len()],
    };
    let y = panel.y();
    let pw = cond.pw_config();
    let hac = cond.hac_config();
    cond.methods
        .iter()
        .map(|m| {
            let fit = match m {
                Method::OlsNw => fit_ols_nw_design(&design, &y, &hac),
                Method::Pw => fit_pw_design(&design, &y, &pw),
            };
            fit.ok()
                .map(|f| (f.beta[idx], f.se[idx]))
                .filter(|(b, s)| b.is_finite() && s.is_finite())
        })
        .collect()
}

pub fn run_condition(cond: &SimCondition) -> Result<Vec<MethodSummary>> {
    cond.validate()?;
    let reps: Vec<Vec<Option<(f64, f64)>>> = (0..cond.replications as u64)
        .into_par_iter()
        .map(|r| replicate(cond, r))
        .collect();
    let n = cond.scenario.n_periods * (cond.scenario.n_controls + 1);
    let df = n.saturating_sub(N_COEF);
    let limit = (MAX_FAILURE_SHARE * cond.replications as f64).floor() as usize;
    cond.methods
        .iter()
        .enumerate()
        .map(|(i, &method)| {
            let ok: Vec<(f64, f64)> = reps.iter().filter_map(|r| r[i]).collect();
            let failed = cond.replications - ok.len();
            if failed > limit {
                return Err(Error::TooManyFailures {
                    failed,
                    replications: cond.replications,
                });
            }
            let est: Vec<f64> = ok.iter().map(|p| p.0).collect();
            let se: Vec<f64> = ok.iter().map(|p| p.1).collect();
            let mut summary = summarize(&est, &se, cond.true_effect, cond.alpha, df)?;
            summary.n_failed = failed;
            Ok(MethodSummary { method, summary })
        })
        .collect()
}

/// One output row of a grid run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub condition: SimCondition,
    pub method: Method,
    pub summary: PerfSummary,
}

pub fn rows_for(cond: &SimCondition, results: Vec<MethodSummary>) -> Vec<GridRow> {
    results
        .into_iter()
        .map(|m| GridRow {
            condition: cond.clone(),
            method: m.method,
            summary: m.summary,
        })
        .collect()
}

/// Runs every condition in parallel; `on_done` sees each finished
/// condition. The output keeps the order of `conditions`.
pub fn run_grid_with<F>(conditions: &[SimCondition], on_done: F) -> Result<Vec<GridRow>>
where
    F: Fn(&SimCondition, &[GridRow]) + Sync,
{
    if conditions.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    let results: Vec<Result<Vec<GridRow>>> = conditions
        .par_iter()
        .map(|c| {
            let rows = rows_for(c, run_condition(c)?);
            on_done(c, &rows);
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn run_grid(conditions: &[SimCondition]) -> Result<Vec<GridRow>> {
    run_grid_with(conditions, |_, _| {})
}

/// Scenario entry in a grid: a named scenario or explicit coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Named(String),
    Custom { name: String, rho: Vec<f64> },
}

impl ScenarioSpec {
    fn resolve(&self, ar_order: usize) -> Result<(String, Vec<f64>)> {
        match self {
            ScenarioSpec::Named(n) => named_scenario(ar_order, n)
                .map(|rho| (n.clone(), rho))
                .ok_or_else(|| Error::Config(format!("no scenario `{n}` for AR order {ar_order}"))),
            ScenarioSpec::Custom { name, rho } => Ok((name.clone(), rho.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PwOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub enforce_stationarity: bool,
}

impl Default for PwOptions {
    fn default() -> Self {
        let d = PwConfig::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            enforce_stationarity: d.enforce_stationarity,
        }
    }
}

/// Simulation run description (`schema: 1`). Every field has a default
/// taken from the primary design, so a config only names what it varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub schema: u32,
    pub mode: Mode,
    pub ar_order: usize,
    pub scenarios: Option<Vec<ScenarioSpec>>,
    pub effect_kind: EffectKind,
    /// Treated-unit inputs: post-treatment trend for trend effects, level
    /// change for level effects.
    pub effects: Option<Vec<f64>>,
    pub include_null: bool,
    pub periods: Vec<usize>,
    pub fit_orders: Option<Vec<usize>>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub n_controls: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub nw_lag: NwLag,
    pub nw_small_sample_adjust: bool,
    pub pw: PwOptions,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            schema: 1,
            mode: Mode::Primary,
            ar_order: 2,
            scenarios: None,
            effect_kind: EffectKind::Trend,
            effects: None,
            include_null: true,
            periods: (1..=10).map(|i| i * 10).collect(),
            fit_orders: None,
            methods: vec![Method::OlsNw, Method::Pw],
            replications: 2000,
            seed: 20_260_414,
            n_controls: 4,
            sigma: 1.0,
            alpha: 0.05,
            nw_lag: NwLag::default(),
            nw_small_sample_adjust: true,
            pw: PwOptions::default(),
        }
    }
}

pub fn default_effects(kind: EffectKind) -> Vec<f64> {
    match kind {
        EffectKind::Trend => vec![1.25, 1.5, 2.0],
        EffectKind::Level => vec![2.0, 2.5, 3.0],
    }
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        if spec.schema != 1 {
            return Err(Error::Config(format!("unsupported schema version {}", spec.schema)));
        }
        Ok(spec)
    }

    /// Expands the grid into conditions in deterministic order: scenario,
    /// effect, series length, fitted order.
    pub fn conditions(&self) -> Result<Vec<SimCondition>> {
        if self.periods.is_empty() {
            return Err(Error::Config("periods must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        let scenarios: Vec<ScenarioSpec> = match &self.scenarios {
            Some(s) if s.is_empty() => return Err(Error::Config("scenarios must not be empty".into())),
            Some(s) => s.clone(),
            None => scenario_names(self.ar_order)
                .iter()
                .map(|n| ScenarioSpec::Named(n.to_string()))
                .collect(),
        };
        let dgp_floor = self.ar_order.max(1);
        let fit_orders = match (&self.fit_orders, self.mode) {
            (Some(f), _) => f.clone(),
            (None, Mode::Misspecification) => (1..=dgp_floor).collect(),
            (None, _) => vec![dgp_floor],
        };
        if fit_orders.is_empty() {
            return Err(Error::Config("fit_orders must not be empty".into()));
        }
        // (treated input, is_null) pairs
        let effects: Vec<Option<f64>> = match self.mode {
            Mode::Sensitivity => vec![None],
            _ => {
                let mut v: Vec<Option<f64>> = self
                    .effects
                    .clone()
                    .unwrap_or_else(|| default_effects(self.effect_kind))
                    .into_iter()
                    .map(Some)
                    .collect();
                if self.include_null {
                    v.insert(0, Some(null_input(self.effect_kind)));
                }
                v
            }
        };

        let mut out = Vec::new();
        for spec in &scenarios {
            let (name, rho) = spec.resolve(self.ar_order)?;
            for effect in &effects {
                for &t in &self.periods {
                    let mut sc = ScenarioConfig {
                        n_periods: t,
                        n_controls: self.n_controls,
                        intervention: Intervention::Halfway,
                        ar: ArSpec::new(rho.clone(), self.sigma),
                        ..ScenarioConfig::default()
                    };
                    match (self.mode, effect) {
                        (Mode::Sensitivity, _) => {
                            sc.level_control = 8.0;
                            sc.level_treated = 10.0;
                            sc.level_change_treated = 2.0;
                            sc.post_trend_treated = 2.0;
                        }
                        (_, Some(v)) => match self.effect_kind {
                            EffectKind::Trend => sc.post_trend_treated = *v,
                            EffectKind::Level => sc.level_change_treated = *v,
                        },
                        (_, None) => {}
                    }
                    let mut base = SimCondition::new(&name, sc, self.effect_kind);
                    base.mode = self.mode;
                    base.methods = self.methods.clone();
                    base.replications = self.replications;
                    base.alpha = self.alpha;
                    base.base_seed = self.seed;
                    base.nw_lag = self.nw_lag;
                    base.nw_small_sample_adjust = self.nw_small_sample_adjust;
                    base.pw = PwConfig {
                        k: base.fit_order,
                        tol: self.pw.tol,
                        max_iter: self.pw.max_iter,
                        enforce_stationarity: self.pw.enforce_stationarity,
                    };
                    for &k in &fit_orders {
                        let mut c = if base.dgp_order() == 0 {
                            let mut c = base.clone();
                            c.fit_order = k;
                            c.pw.k = k;
                            c
                        } else {
                            misspec_condition(&base, k)?
                        };
                        c.mode = self.mode;
                        c.validate()?;
                        out.push(c);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn null_input(kind: EffectKind) -> f64 {
    match kind {
        // treated post-trend equal to the controls' post-trend
        EffectKind::Trend => 1.0,
        EffectKind::Level => 0.0,
    }
}

pub const RESULTS_HEADER: &str = "mode,ar_order,scenario,effect_kind,effect_size,T,method,fit_order,replications,power,coverage,type1_applicable,pct_bias,rmse,empirical_se,mean_model_se,n_failed";

pub fn write_results_csv<W: Write>(rows: &[GridRow], mut out: W, header: bool) -> Result<()> {
    if header {
        writeln!(out, "{RESULTS_HEADER}")?;
    }
    for r in rows {
        let c = &r.condition;
        let s = &r.summary;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.mode.key(),
            c.dgp_order(),
            c.scenario_name,
            c.effect_kind.key(),
            c.true_effect,
            c.scenario.n_periods,
            r.method.key(),
            c.fit_order,
            c.replications,
            s.power_or_type1,
            s.coverage,
            c.true_effect == 0.0,
            s.pct_bias,
            s.rmse,
            s.empirical_se,
            s.mean_model_se,
            s.n_failed
        )?;
    }
    Ok(())
}
