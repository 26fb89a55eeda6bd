//! Data-generating process: MG-ITSA panels with AR(k) errors.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{design_row, CoefVector, Panel, PanelRow, N_COEF};

/// Periods discarded before the returned AR sample starts.
pub const BURN_IN: usize = 500;

/// Generators refuse processes this close to the unit circle.
pub const STATIONARITY_MARGIN: f64 = 1e-8;

/// Name recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha 0.9), one stream per unit id";

/// Autoregressive error process `e_t = sum_j rho_j e_{t-j} + u_t`,
/// `u_t ~ N(0, sigma^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl ArSpec {
    pub fn new(rho: Vec<f64>, sigma: f64) -> Self {
        Self { rho, sigma }
    }

    pub fn iid(sigma: f64) -> Self {
        Self { rho: Vec::new(), sigma }
    }

    pub fn order(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if self.rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("AR coefficients must be finite".into()));
        }
        if !self.rho.is_empty() {
            let radius = spectral_radius(&self.rho);
            if radius >= 1.0 - STATIONARITY_MARGIN {
                return Err(Error::NonStationary { radius });
            }
        }
        Ok(())
    }
}

/// First row `rho`, ones on the subdiagonal.
pub fn companion_matrix(rho: &[f64]) -> Result<DMatrix<f64>> {
    let k = rho.len();
    if k == 0 {
        return Err(Error::EmptyOrder);
    }
    let mut c = DMatrix::<f64>::zeros(k, k);
    for (j, r) in rho.iter().enumerate() {
        c[(0, j)] = *r;
    }
    for i in 1..k {
        c[(i, i - 1)] = 1.0;
    }
    Ok(c)
}

/// Largest eigenvalue modulus of the companion matrix. Zero for `k = 0`.
pub fn spectral_radius(rho: &[f64]) -> f64 {
    // trailing zero coefficients only add roots at the origin
    let k = rho.iter().rposition(|r| *r != 0.0).map_or(0, |i| i + 1);
    let rho = &rho[..k];
    match k {
        0 => 0.0,
        1 => rho[0].abs(),
        _ => {
            let c = companion_matrix(rho).expect("nonempty");
            match nalgebra::Schur::try_new(c.clone(), 1e-14, 100_000) {
                Some(schur) => schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.norm())
                    .fold(0.0, f64::max),
                None => gelfand_radius(c),
            }
        }
    }
}

// lim ||C^n||^(1/n) by repeated squaring with rescaling
fn gelfand_radius(mut c: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut est = 0.0;
    for m in 0..60 {
        let norm = c.norm();
        if norm == 0.0 {
            return 0.0;
        }
        c /= norm;
        log_scale += norm.ln() / f64::powi(2.0, m);
        est = log_scale.exp();
        c = &c * &c;
    }
    est
}

/// Draws `n` consecutive values of the AR process after a zero-started
/// burn-in of [`BURN_IN`] periods.
pub fn gen_ar_errors<R: Rng + ?Sized>(ar: &ArSpec, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    ar.validate()?;
    let k = ar.order();
    let total = n + if k == 0 { 0 } else { BURN_IN };
    let mut e = Vec::with_capacity(total);
    for t in 0..total {
        let u: f64 = rng.sample(StandardNormal);
        let mut v = ar.sigma * u;
        for (j, r) in ar.rho.iter().enumerate() {
            if t > j {
                v += r * e[t - j - 1];
            }
        }
        e.push(v);
    }
    Ok(e.split_off(total - n))
}

/// Intervention period: an explicit `t*` or the series midpoint. Serialised
/// as an integer or the string `"halfway"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intervention {
    At(i64),
    Halfway,
}

impl Serialize for Intervention {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Intervention::At(t) => s.serialize_i64(*t),
            Intervention::Halfway => s.serialize_str("halfway"),
        }
    }
}

impl<'de> Deserialize<'de> for Intervention {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            At(i64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::At(t) => Ok(Intervention::At(t)),
            Raw::Name(n) if n == "halfway" => Ok(Intervention::Halfway),
            Raw::Name(n) => Err(serde::de::Error::custom(format!(
                "intervention must be an integer period or \"halfway\", got \"{n}\""
            ))),
        }
    }
}

impl Intervention {
    /// Resolves to a concrete period for a series of `n_periods` starting at 1.
    pub fn resolve(self, n_periods: usize) -> i64 {
        match self {
            Intervention::At(t) => t,
            Intervention::Halfway => (n_periods / 2 + 1) as i64,
        }
    }
}

/// Scenario inputs expressed as group-level quantities. Defaults are the
/// primary simulation design with no treatment effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_periods: usize,
    pub n_controls: usize,
    pub intervention: Intervention,
    /// `b0`
    pub level_control: f64,
    /// `b0 + b4`
    pub level_treated: f64,
    /// `b1`
    pub trend_control: f64,
    /// `b1 + b5`
    pub trend_treated: f64,
    /// `b2`
    pub level_change_control: f64,
    /// `b2 + b6`
    pub level_change_treated: f64,
    /// `b1 + b3`
    pub post_trend_control: f64,
    /// `b1 + b3 + b5 + b7`
    pub post_trend_treated: f64,
    pub ar: ArSpec,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_periods: 20,
            n_controls: 4,
            intervention: Intervention::Halfway,
            level_control: 10.0,
            level_treated: 10.0,
            trend_control: 1.0,
            trend_treated: 1.0,
            level_change_control: 0.0,
            level_change_treated: 0.0,
            post_trend_control: 1.0,
            post_trend_treated: 1.0,
            ar: ArSpec::iid(1.0),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn intervention_time(&self) -> i64 {
        self.intervention.resolve(self.n_periods)
    }

    /// Solves the group-level inputs for the eight regression coefficients.
    pub fn betas(&self) -> CoefVector {
        let b0 = self.level_control;
        let b1 = self.trend_control;
        let b2 = self.level_change_control;
        let b3 = self.post_trend_control - b1;
        let b4 = self.level_treated - b0;
        let b5 = self.trend_treated - b1;
        let b6 = self.level_change_treated - b2;
        let b7 = self.post_trend_treated - b1 - b3 - b5;
        CoefVector([b0, b1, b2, b3, b4, b5, b6, b7])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_periods < 4 {
            return Err(Error::Config(format!(
                "n_periods must be at least 4, got {}",
                self.n_periods
            )));
        }
        if self.n_controls == 0 {
            return Err(Error::Config("n_controls must be at least 1".into()));
        }
        let t0 = self.intervention_time();
        if t0 < 3 || t0 > self.n_periods as i64 - 1 {
            return Err(Error::Config(format!(
                "intervention at t = {t0} leaves fewer than 2 pre or 2 post periods in 1..{}",
                self.n_periods
            )));
        }
        let inputs = [
            self.level_control,
            self.level_treated,
            self.trend_control,
            self.trend_treated,
            self.level_change_control,
            self.level_change_treated,
            self.post_trend_control,
            self.post_trend_treated,
        ];
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("scenario inputs must be finite".into()));
        }
        self.ar.validate()
    }

    /// Id of the treated unit; controls are `0..n_controls`.
    pub fn treated_id(&self) -> i64 {
        self.n_controls as i64
    }
}

/// Generates one panel from `cfg` using `cfg.seed`. Every unit draws its
/// errors from its own ChaCha stream, so the panel depends only on the
/// configuration.
pub fn gen_panel(cfg: &ScenarioConfig) -> Result<Panel> {
    gen_panel_with_seed(cfg, cfg.seed)
}

pub fn gen_panel_with_seed(cfg: &ScenarioConfig, seed: u64) -> Result<Panel> {
    cfg.validate()?;
    let beta = cfg.betas();
    let t0 = cfg.intervention_time();
    let n = cfg.n_periods;
    let mut rows = Vec::with_capacity(n * (cfg.n_controls + 1));
    for unit in 0..=cfg.n_controls as i64 {
        let treated = unit == cfg.treated_id();
        let mut rng = unit_rng(seed, unit as u64);
        let errors = gen_ar_errors(&cfg.ar, n, &mut rng)?;
        for (i, e) in errors.into_iter().enumerate() {
            let t = i as i64 + 1;
            let post = t >= t0;
            let x = design_row(t, post, treated);
            let mean: f64 = (0..N_COEF).map(|j| x[j] * beta[j]).sum();
            rows.push(PanelRow {
                unit_id: unit,
                t,
                y: mean + e,
                is_treated_unit: treated,
                is_post: post,
            });
        }
    }
    Panel::new(rows)
}

pub(crate) fn unit_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `rep` of the condition identified by `key`.
pub fn derive_seed(base_seed: u64, key: &str, rep: u64) -> u64 {
    // FNV-1a: stable across platforms and toolchains
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(base_seed ^ h) ^ rep)
}

pub const CSV_HEADER: [&str; 5] = ["unit_id", "t", "treated", "post", "y"];

/// Writes `panel` as CSV. Each entry of `comments` becomes a `# ` line
/// before the header.
pub fn write_panel_csv<W: Write>(panel: &Panel, mut out: W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in panel.rows() {
        w.write_record([
            r.unit_id.to_string(),
            r.t.to_string(),
            u8::from(r.is_treated_unit).to_string(),
            u8::from(r.is_post).to_string(),
            format!("{:?}", r.y),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Csv {
        line,
        msg: e.to_string(),
    }
}

fn parse_flag(s: &str, line: usize, name: &str) -> Result<bool> {
    match s.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(Error::Csv {
            line,
            msg: format!("column `{name}` must be 0 or 1, got `{other}`"),
        }),
    }
}

/// Reads a panel CSV. `#` lines are ignored; the header must be exactly
/// `unit_id,t,treated,post,y`.
pub fn read_panel_csv<R: Read>(input: R) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let header_line = rdr.position().line() as usize;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Csv {
            line: header_line.max(1),
            msg: format!(
                "expected header `{}`, got `{}`",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 5 {
            return Err(Error::Csv {
                line,
                msg: format!("expected 5 fields, got {}", rec.len()),
            });
        }
        let int = |i: usize, name: &str| -> Result<i64> {
            rec[i].parse::<i64>().map_err(|_| Error::Csv {
                line,
                msg: format!("column `{name}` is not an integer: `{}`", &rec[i]),
            })
        };
        let y: f64 = rec[4].parse().map_err(|_| Error::Csv {
            line,
            msg: format!("column `y` is not a number: `{}`", &rec[4]),
        })?;
        if !y.is_finite() {
            return Err(Error::Csv {
                line,
                msg: "column `y` must be finite".into(),
            });
        }
        rows.push(PanelRow {
            unit_id: int(0, "unit_id")?,
            t: int(1, "t")?,
            is_treated_unit: parse_flag(&rec[2], line, "treated")?,
            is_post: parse_flag(&rec[3], line, "post")?,
            y,
        });
    }
    Panel::new(rows)
}
