//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{dense_gls, max_abs_diff, naive_nw_cov, psi_autocov, Mat};
use itsa_lab::cli::run_example;
use itsa_lab::dgp::{gen_panel_with_seed, spectral_radius, ArSpec, ScenarioConfig};
use itsa_lab::model::{build_design, Method};
use itsa_lab::olsnw::nw_cov;
use itsa_lab::praisk::{ar_autocovariances, fit_pw, PwConfig, WhiteningOperator};
use itsa_lab::simulate::{run_grid, EffectKind, GridRow, GridSpec, Mode, ScenarioSpec};
use itsa_lab::Error;

const SEED: u64 = 20_260_414;

const SCENARIOS: [(&str, &[f64]); 6] = [
    ("AR2 mild", &[0.4, 0.2]),
    ("AR2 oscillatory", &[0.5, -0.4]),
    ("AR2 persistent", &[0.7, 0.2]),
    ("AR3 mild", &[0.4, 0.2, 0.1]),
    ("AR3 oscillatory", &[0.7, -0.3, 0.15]),
    ("AR3 persistent", &[0.6, 0.25, 0.1]),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn c1_spectral_radii() -> Outcome {
    let expected = [0.69, 0.63, 0.90, 0.72, 0.84, 0.93];
    let mut parts = Vec::new();
    let mut pass = true;
    for ((name, rho), want) in SCENARIOS.iter().zip(expected) {
        let r = spectral_radius(rho);
        pass &= (r - want).abs() <= 0.015;
        parts.push(format!("{name} {r:.4} (want {want})"));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn c2_whitening() -> Outcome {
    let sigma = 1.7;
    let mut worst = 0.0f64;
    for (_, rho) in SCENARIOS {
        for n in [5usize, 10, 25] {
            let g = ar_autocovariances(rho, sigma, n).unwrap();
            let omega = DMatrix::from_fn(n, n, |i, j| g[i.abs_diff(j)]);
            let l = WhiteningOperator::new(rho).unwrap().dense(n);
            let m = &l * omega * l.transpose();
            let err = (m - DMatrix::<f64>::identity(n, n) * (sigma * sigma)).amax();
            worst = worst.max(err);
        }
    }
    Outcome {
        pass: worst < 1e-9,
        detail: format!("max |L Omega L' - sigma^2 I| = {worst:.2e} over 6 scenarios x T in {{5, 10, 25}}"),
    }
}

fn to_mat(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn c3_gls_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let rhos: [&[f64]; 9] = [
        &[0.5],
        &[-0.3],
        &[0.8],
        &[0.4, 0.2],
        &[0.5, -0.4],
        &[0.7, 0.2],
        &[0.4, 0.2, 0.1],
        &[0.7, -0.3, 0.15],
        &[0.6, 0.25, 0.1],
    ];
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut skipped = 0;
    let mut orders = [0usize; 4];
    while done < 50 {
        let rho = rhos[rng.random_range(0..rhos.len())];
        let k = rho.len();
        let t = rng.random_range(8..=15usize);
        let cfg = ScenarioConfig {
            n_periods: t,
            n_controls: 1,
            level_control: rng.random_range(-5.0..5.0),
            level_treated: rng.random_range(-5.0..5.0),
            trend_treated: rng.random_range(-1.0..1.0),
            post_trend_treated: rng.random_range(-1.0..2.0),
            ar: ArSpec::new(rho.to_vec(), rng.random_range(0.3..2.0)),
            ..ScenarioConfig::default()
        };
        let panel = gen_panel_with_seed(&cfg, rng.random()).unwrap();
        let t0 = cfg.intervention_time();
        let fit = match fit_pw(&panel, t0, &PwConfig::with_order(k)) {
            Ok(f) => f,
            Err(Error::NotConverged { fit, .. }) => *fit,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let rho_hat = fit.rho_hat.clone().unwrap();
        let design = build_design(&panel, t0).unwrap();
        let gamma = psi_autocov(&rho_hat, 1.0, t);
        let blocks: Vec<usize> = design.segments.iter().map(|s| s.len()).collect();
        let beta = dense_gls(&to_mat(&design.rows), &panel.y(), &blocks, &gamma);
        for (a, b) in beta.iter().zip(fit.beta.as_slice()) {
            worst = worst.max((a - b).abs());
        }
        orders[k] += 1;
        done += 1;
    }
    Outcome {
        pass: worst < 1e-8,
        detail: format!(
            "max |beta_PW - beta_GLS| = {worst:.2e} on 50 fixtures (k=1/2/3: {}/{}/{}; {skipped} rejected draws)",
            orders[1], orders[2], orders[3]
        ),
    }
}

fn c4_nw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let units = rng.random_range(1..=3usize);
        let lens: Vec<usize> = (0..units).map(|_| rng.random_range(5..=12usize)).collect();
        let n: usize = lens.iter().sum();
        if n < 10 {
            // keep the 8-column design comfortably full rank
            continue;
        }
        let min_len = *lens.iter().min().unwrap();
        let lag = rng.random_range(0..=3usize.min(min_len - 1));
        let mut unit = Vec::with_capacity(n);
        let mut segments = Vec::new();
        let mut start = 0;
        for (u, &l) in lens.iter().enumerate() {
            unit.extend(std::iter::repeat_n(u, l));
            segments.push(start..start + l);
            start += l;
        }
        let x: Mat = (0..n)
            .map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let adjust = rng.random_bool(0.5);
        let xm = DMatrix::from_fn(n, 8, |i, j| x[i][j]);
        let got = to_mat(&nw_cov(&xm, &e, lag, &segments, adjust).unwrap());
        let want = naive_nw_cov(&x, &e, &unit, lag, adjust);
        worst = worst.max(max_abs_diff(&got, &want));
    }
    Outcome {
        pass: worst < 1e-12,
        detail: format!("max |cov - naive| = {worst:.2e} on 100 fixtures"),
    }
}

fn null_grid(rho: &[f64], name: &str, periods: Vec<usize>, fit_orders: Option<Vec<usize>>) -> GridSpec {
    GridSpec {
        ar_order: rho.len(),
        scenarios: Some(vec![ScenarioSpec::Custom {
            name: name.to_string(),
            rho: rho.to_vec(),
        }]),
        effect_kind: EffectKind::Trend,
        effects: Some(vec![]),
        include_null: true,
        periods,
        fit_orders,
        seed: SEED,
        ..GridSpec::default()
    }
}

fn find(rows: &[GridRow], t: usize, method: Method) -> &GridRow {
    rows.iter()
        .find(|r| r.condition.scenario.n_periods == t && r.method == method)
        .expect("row present")
}

fn c5_type1_persistent_ar2() -> Outcome {
    let rows = run_grid(&null_grid(&[0.7, 0.2], "persistent", vec![20, 100], None).conditions().unwrap()).unwrap();
    let nw100 = find(&rows, 100, Method::OlsNw).summary.power_or_type1;
    let pw100 = find(&rows, 100, Method::Pw).summary.power_or_type1;
    let nw20 = find(&rows, 20, Method::OlsNw).summary.power_or_type1;
    Outcome {
        pass: in_range(nw100, 0.40, 0.60) && in_range(pw100, 0.03, 0.10) && in_range(nw20, 0.15, 0.30),
        detail: format!(
            "T=100: OLS-NW {nw100:.4} [0.40, 0.60], PW {pw100:.4} [0.03, 0.10]; T=20: OLS-NW {nw20:.4} [0.15, 0.30]"
        ),
    }
}

fn c6_coverage_persistent_ar2() -> Outcome {
    let mut spec = null_grid(&[0.7, 0.2], "persistent", vec![100], None);
    spec.effects = Some(vec![1.5]);
    spec.include_null = false;
    let rows = run_grid(&spec.conditions().unwrap()).unwrap();
    let pw = find(&rows, 100, Method::Pw).summary.coverage;
    let nw = find(&rows, 100, Method::OlsNw).summary.coverage;
    Outcome {
        pass: in_range(pw, 0.88, 0.96) && in_range(nw, 0.40, 0.60),
        detail: format!("PW coverage {pw:.4} [0.88, 0.96], OLS-NW coverage {nw:.4} [0.40, 0.60]"),
    }
}

fn c7_type1_persistent_ar3() -> Outcome {
    let rows = run_grid(&null_grid(&[0.6, 0.25, 0.1], "persistent", vec![100], None).conditions().unwrap()).unwrap();
    let nw = find(&rows, 100, Method::OlsNw).summary.power_or_type1;
    let pw = find(&rows, 100, Method::Pw).summary.power_or_type1;
    Outcome {
        pass: in_range(nw, 0.45, 0.65) && in_range(pw, 0.07, 0.16),
        detail: format!("OLS-NW {nw:.4} [0.45, 0.65], PW {pw:.4} [0.07, 0.16]"),
    }
}

fn c8_misspecification() -> Outcome {
    let spec = GridSpec {
        mode: Mode::Misspecification,
        ar_order: 2,
        effects: Some(vec![]),
        include_null: true,
        periods: vec![20, 60, 100],
        methods: vec![Method::Pw],
        seed: SEED,
        ..GridSpec::default()
    };
    let rows = run_grid(&spec.conditions().unwrap()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["mild", "oscillatory", "persistent"] {
        for t in [20, 60, 100] {
            let rate = |k: usize| {
                rows.iter()
                    .find(|r| r.condition.scenario_name == name && r.condition.scenario.n_periods == t && r.condition.fit_order == k)
                    .expect("row present")
                    .summary
                    .power_or_type1
            };
            let (a1, a2) = (rate(1), rate(2));
            let diff = 100.0 * (a1 - a2).abs();
            pass &= diff <= 3.0;
            parts.push(format!("{name} T={t}: AR1 {a1:.4} AR2 {a2:.4} ({diff:.2} pp)"));
        }
    }
    Outcome {
        pass,
        detail: format!("limit 3 pp; {}", parts.join("; ")),
    }
}

fn c9_bias() -> Outcome {
    let mut spec = null_grid(&[0.4, 0.2], "mild", vec![40, 100], None);
    spec.effects = Some(vec![1.5]);
    spec.include_null = false;
    let rows = run_grid(&spec.conditions().unwrap()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &rows {
        let b = r.summary.pct_bias;
        pass &= b.abs() < 3.0;
        parts.push(format!("T={} {} {b:.3}%", r.condition.scenario.n_periods, r.method.label()));
    }
    Outcome {
        pass: pass && rows.len() == 4,
        detail: parts.join(", "),
    }
}

fn c10_applied_example() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for ar in [2u8, 3] {
        let r = run_example(ar, itsa_lab::cli::EXAMPLE_SEED, 0.05).unwrap();
        let ratio = r.se_ratio();
        let same_sign = r.ols_nw.estimate.signum() == r.pw.estimate.signum();
        pass &= ratio > 1.5 && same_sign;
        parts.push(format!(
            "AR{ar}: SE ratio {ratio:.2}, OLS-NW {:.4}, PW {:.4}",
            r.ols_nw.estimate, r.pw.estimate
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn c11_iid_null() -> Outcome {
    let rows = run_grid(&null_grid(&[], "iid", vec![100], None).conditions().unwrap()).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &rows {
        let s = &r.summary;
        pass &= in_range(s.power_or_type1, 0.035, 0.070) && in_range(s.coverage, 0.93, 0.97);
        parts.push(format!("{} Type I {:.4} coverage {:.4}", r.method.label(), s.power_or_type1, s.coverage));
    }
    Outcome {
        pass: pass && rows.len() == 2,
        detail: parts.join(", "),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("spectral radii of the six scenarios", c1_spectral_radii),
        ("whitening operator against Toeplitz covariance", c2_whitening),
        ("Prais-Winsten against dense GLS", c3_gls_oracle),
        ("Newey-West against naive pair sum", c4_nw_oracle),
        ("Type I, AR2 persistent", c5_type1_persistent_ar2),
        ("coverage, AR2 persistent, 50% trend effect", c6_coverage_persistent_ar2),
        ("Type I, AR3 persistent", c7_type1_persistent_ar3),
        ("AR1 vs AR2 fit on AR2 data", c8_misspecification),
        ("percentage bias, AR2 mild", c9_bias),
        ("applied example SE ratio", c10_applied_example),
        ("iid null sanity", c11_iid_null),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} {tag}: {name} | {} | {:.1}s",
            i + 1,
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
