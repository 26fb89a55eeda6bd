use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use itsa_lab_ffi::*;

fn last_error() -> String {
    let p = itsa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn generated(config: &str) -> *mut ItsaPanel {
    let cfg = CString::new(config).unwrap();
    let mut panel = ptr::null_mut();
    let s = unsafe { itsa_panel_generate(cfg.as_ptr(), &mut panel) };
    assert_eq!(s, ItsaStatus::Ok);
    panel
}

#[test]
fn arrays_to_fit() {
    // two units, ten periods, noise-free line with a trend effect of 0.5
    let mut unit = Vec::new();
    let mut t = Vec::new();
    let mut treated = Vec::new();
    let mut post = Vec::new();
    let mut y = Vec::new();
    for u in 0..2i64 {
        for p in 1..=10i64 {
            let after = p >= 6;
            unit.push(u);
            t.push(p);
            treated.push(u8::from(u == 1));
            post.push(u8::from(after));
            let slope = if u == 1 && after { 1.5 } else { 1.0 };
            y.push(2.0 + p as f64 + if after { (slope - 1.0) * p as f64 } else { 0.0 } + 0.01 * ((p * 7 + u * 3) % 5) as f64);
        }
    }
    let mut panel = ptr::null_mut();
    let s = unsafe {
        itsa_panel_from_arrays(20, unit.as_ptr(), t.as_ptr(), treated.as_ptr(), post.as_ptr(), y.as_ptr(), &mut panel)
    };
    assert_eq!(s, ItsaStatus::Ok);
    assert_eq!(unsafe { itsa_panel_len(panel) }, 20);
    assert_eq!(unsafe { itsa_panel_n_units(panel) }, 2);
    let mut t0 = 0;
    assert_eq!(unsafe { itsa_panel_intervention(panel, &mut t0) }, ItsaStatus::Ok);
    assert_eq!(t0, 6);

    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { itsa_fit_ols_nw(panel, t0, 1, true, &mut fit) }, ItsaStatus::Ok);
    let mut beta = [0.0; ITSA_N_COEF];
    let mut se = [0.0; ITSA_N_COEF];
    let mut cov = [0.0; ITSA_N_COEF * ITSA_N_COEF];
    unsafe {
        assert_eq!(itsa_fit_beta(fit, beta.as_mut_ptr()), ItsaStatus::Ok);
        assert_eq!(itsa_fit_se(fit, se.as_mut_ptr()), ItsaStatus::Ok);
        assert_eq!(itsa_fit_cov(fit, cov.as_mut_ptr()), ItsaStatus::Ok);
        assert_eq!(itsa_fit_lag(fit), 1);
        assert_eq!(itsa_fit_df(fit), 12);
        assert_eq!(itsa_fit_rho_order(fit), 0);
    }
    for i in 0..ITSA_N_COEF {
        assert!((cov[i * ITSA_N_COEF + i].sqrt() - se[i]).abs() < 1e-12);
    }
    assert!((beta[7] - 0.5).abs() < 0.05);
    let mut w = ItsaWald::default();
    assert_eq!(unsafe { itsa_fit_wald(fit, 7, 0.0, 0.05, &mut w) }, ItsaStatus::Ok);
    assert_eq!(w.estimate, beta[7]);
    assert_eq!(w.df, 12);
    assert_eq!(unsafe { itsa_fit_wald(fit, 8, 0.0, 0.05, &mut w) }, ItsaStatus::InputError);
    assert!(last_error().contains('8'));

    let json = unsafe { itsa_fit_to_json(fit) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    assert!(text.contains("\"method\":\"ols_nw\""));
    unsafe {
        itsa_string_free(json);
        itsa_fit_free(fit);
        itsa_panel_free(panel);
    }
}

#[test]
fn pw_through_generator() {
    let panel = generated(r#"{"n_periods": 60, "ar": {"rho": [0.6, 0.2]}, "seed": 9}"#);
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { itsa_fit_pw(panel, 31, 2, 0.0, 0, &mut fit) }, ItsaStatus::Ok);
    let k = unsafe { itsa_fit_rho_order(fit) };
    assert_eq!(k, 2);
    let mut rho = [0.0; 2];
    let mut se = [0.0; 2];
    assert_eq!(unsafe { itsa_fit_rho(fit, rho.as_mut_ptr(), se.as_mut_ptr(), 2) }, ItsaStatus::Ok);
    assert!(rho[0] > 0.2 && se.iter().all(|s| *s > 0.0));
    assert!(unsafe { itsa_fit_iterations(fit) } >= 1);
    assert_eq!(unsafe { itsa_fit_rho(fit, rho.as_mut_ptr(), ptr::null_mut(), 1) }, ItsaStatus::InvalidArgument);
    let mut y = vec![0.0; 300];
    assert_eq!(unsafe { itsa_panel_y(panel, y.as_mut_ptr(), 300) }, ItsaStatus::Ok);
    assert_eq!(unsafe { itsa_panel_y(panel, y.as_mut_ptr(), 10) }, ItsaStatus::InvalidArgument);
    unsafe {
        itsa_fit_free(fit);
        itsa_panel_free(panel);
    }
}

#[test]
fn not_converged_still_returns_fit() {
    let panel = generated(r#"{"n_periods": 40, "ar": {"rho": [0.7, 0.2]}, "seed": 2}"#);
    let mut fit = ptr::null_mut();
    let s = unsafe { itsa_fit_pw(panel, 21, 2, 1e-15, 1, &mut fit) };
    assert_eq!(s, ItsaStatus::NotConverged);
    assert!(!fit.is_null());
    assert_eq!(unsafe { itsa_fit_iterations(fit) }, 1);
    unsafe {
        itsa_fit_free(fit);
        itsa_panel_free(panel);
    }
}

#[test]
fn error_paths() {
    let mut panel = ptr::null_mut();
    let s = unsafe { itsa_panel_generate(ptr::null(), &mut panel) };
    assert_eq!(s, ItsaStatus::NullPointer);
    let bad = CString::new(r#"{"n_periods": 20, "colour": 1}"#).unwrap();
    assert_eq!(unsafe { itsa_panel_generate(bad.as_ptr(), &mut panel) }, ItsaStatus::InputError);
    assert!(last_error().contains("colour"));
    let missing = CString::new("/nonexistent.csv").unwrap();
    assert_eq!(unsafe { itsa_panel_from_csv(missing.as_ptr(), &mut panel) }, ItsaStatus::InputError);
    let flags = [2u8];
    let v = [0i64];
    let y = [0.0];
    let s = unsafe { itsa_panel_from_arrays(1, v.as_ptr(), v.as_ptr(), flags.as_ptr(), flags.as_ptr(), y.as_ptr(), &mut panel) };
    assert_eq!(s, ItsaStatus::InvalidArgument);

    let p = generated(r#"{"n_periods": 12}"#);
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { itsa_fit_ols_nw(p, 7, 12, true, &mut fit) }, ItsaStatus::EstimationError);
    assert_eq!(unsafe { itsa_fit_ols_nw(ptr::null(), 7, -1, true, &mut fit) }, ItsaStatus::NullPointer);
    unsafe {
        itsa_panel_free(p);
        itsa_panel_free(ptr::null_mut());
        itsa_fit_free(ptr::null_mut());
    }
}

#[test]
fn csv_panel() {
    let dir = std::env::temp_dir().join(format!("itsa-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("p.csv");
    std::fs::write(&path, "# note\nunit_id,t,treated,post,y\n0,1,0,0,1\n0,2,0,0,2\n0,3,0,1,3\n0,4,0,1,4\n1,1,1,0,1\n1,2,1,0,2\n1,3,1,1,3\n1,4,1,1,5\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut panel = ptr::null_mut();
    assert_eq!(unsafe { itsa_panel_from_csv(c.as_ptr(), &mut panel) }, ItsaStatus::Ok);
    assert_eq!(unsafe { itsa_panel_len(panel) }, 8);
    unsafe { itsa_panel_free(panel) };
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn spectral_radius_and_version() {
    let rho = [0.5, -0.4];
    let r = unsafe { itsa_spectral_radius(rho.as_ptr(), 2) };
    assert!((r - 0.4f64.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { itsa_spectral_radius(ptr::null(), 0) }, 0.0);
    assert!(unsafe { itsa_spectral_radius(ptr::null(), 2) }.is_nan());
    let v = unsafe { CStr::from_ptr(itsa_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/itsa_lab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["itsa_panel_from_arrays", "itsa_fit_pw", "itsa_fit_wald", "ItsaStatus", "ITSA_N_COEF 8"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    }
    let src = std::env::temp_dir().join(format!("itsa-ffi-check-{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"itsa_lab.h\"\n\
         int main(void) {\n\
           ItsaPanel *p = 0; ItsaFit *f = 0; ItsaWald w; double b[ITSA_N_COEF];\n\
           if (itsa_panel_generate(\"{}\", &p) != ITSA_STATUS_OK) return 1;\n\
           if (itsa_fit_pw(p, 11, 1, 0.0, 0, &f) == ITSA_STATUS_OK) { itsa_fit_beta(f, b); itsa_fit_wald(f, 7, 0.0, 0.05, &w); }\n\
           itsa_fit_free(f); itsa_panel_free(p);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(root.join("include"))
        .arg(&src)
        .output()
        .unwrap();
    std::fs::remove_file(&src).ok();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
