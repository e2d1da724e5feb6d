use std::ffi::{CStr, CString};
use std::ptr;

use weekcast_ffi::*;

fn seasonal_series(n: usize) -> Vec<f64> {
    // deterministic AR(1) noise around an annual cycle
    let mut e = 0.0;
    let mut state = 12345u64;
    (0..n)
        .map(|i| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            e = 0.5 * e + 0.02 * u;
            1000.0 * (1.0 + 0.2 * (2.0 * std::f64::consts::PI * i as f64 / 52.0).cos()) * e.exp()
        })
        .collect()
}

fn last_error() -> String {
    let p = wc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_series(values: &[f64]) -> *mut WcSeries {
    let name = CString::new("tpv").unwrap();
    let start = CString::new("2017-01-02").unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { wc_series_new(name.as_ptr(), start.as_ptr(), values.as_ptr(), values.len(), &mut s) };
    assert_eq!(st, WcStatus::Ok);
    s
}

#[test]
fn fit_forecast_roundtrip() {
    let y = seasonal_series(156);
    let s = new_series(&y);
    assert_eq!(unsafe { wc_series_len(s) }, 156);
    let order = [1usize, 0, 0, 0, 1, 0, 52];
    let mut m = ptr::null_mut();
    let st = unsafe { wc_sarimax_fit(s, order.as_ptr(), WC_FLAG_PEAK | WC_FLAG_COVID, true, 1, &mut m) };
    assert_eq!(st, WcStatus::Ok, "{}", last_error());
    assert!(unsafe { wc_model_aicc(m) }.is_finite());

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { wc_model_to_json(m, &mut json) }, WcStatus::Ok);
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { wc_model_from_json(json, &mut m2) }, WcStatus::Ok);
    assert_eq!(unsafe { wc_model_aicc(m2) }, unsafe { wc_model_aicc(m) });
    unsafe { wc_string_free(json) };

    let mut f = ptr::null_mut();
    assert_eq!(unsafe { wc_forecast(m2, s, 13, &mut f) }, WcStatus::Ok);
    assert_eq!(unsafe { wc_forecast_horizon(f) }, 13);
    let (mut p50, mut p90) = (0.0, 0.0);
    for h in 1..=13 {
        assert_eq!(unsafe { wc_forecast_quantile(f, h, 0.5, &mut p50) }, WcStatus::Ok);
        assert_eq!(unsafe { wc_forecast_quantile(f, h, 0.9, &mut p90) }, WcStatus::Ok);
        assert!(p50 > 0.0 && p90 > p50);
    }
    assert_eq!(unsafe { wc_forecast_quantile(f, 14, 0.5, &mut p50) }, WcStatus::Usage);

    unsafe {
        wc_forecast_free(f);
        wc_model_free(m);
        wc_model_free(m2);
        wc_series_free(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut s = ptr::null_mut();
    let start = CString::new("2017-01-02").unwrap();
    let st = unsafe { wc_series_new(ptr::null(), start.as_ptr(), ptr::null(), 0, &mut s) };
    assert_eq!(st, WcStatus::NullArgument);
    assert!(last_error().contains("name"));

    let name = CString::new("x").unwrap();
    let tuesday = CString::new("2017-01-03").unwrap();
    let v = [1.0, 2.0];
    let st = unsafe { wc_series_new(name.as_ptr(), tuesday.as_ptr(), v.as_ptr(), 2, &mut s) };
    assert_ne!(st, WcStatus::Ok);

    let bad = [0xffu8, 0];
    let st = unsafe { wc_series_new(bad.as_ptr().cast(), start.as_ptr(), v.as_ptr(), 2, &mut s) };
    assert_eq!(st, WcStatus::InvalidUtf8);

    let mut m = ptr::null_mut();
    let garbage = CString::new("{not json").unwrap();
    assert_ne!(unsafe { wc_model_from_json(garbage.as_ptr(), &mut m) }, WcStatus::Ok);
    assert!(m.is_null());

    // a successful call clears the message
    let mut out = 0.0;
    let a = [100.0, 200.0];
    let p = [110.0, 180.0];
    assert_eq!(unsafe { wc_mape(a.as_ptr(), p.as_ptr(), 2, &mut out) }, WcStatus::Ok);
    assert!(wc_last_error().is_null());
}

#[test]
fn metrics() {
    let a = [100.0, 200.0];
    let p = [110.0, 180.0];
    let mut out = 0.0;
    assert_eq!(unsafe { wc_mape(a.as_ptr(), p.as_ptr(), 2, &mut out) }, WcStatus::Ok);
    assert!((out - 10.0).abs() < 1e-12);
    let (a, p) = ([10.0], [8.0]);
    assert_eq!(unsafe { wc_pinball(a.as_ptr(), p.as_ptr(), 1, 0.9, &mut out) }, WcStatus::Ok);
    assert!((out - 1.8).abs() < 1e-12);
    let z = [0.0];
    assert_eq!(unsafe { wc_mape(z.as_ptr(), p.as_ptr(), 1, &mut out) }, WcStatus::Data);
}

#[test]
fn peak_scan_writes_buffers() {
    let mut y = vec![100.0; 60];
    y[40] = 200.0;
    let s = new_series(&y);
    let mut flags = vec![0u8; 60];
    let mut adj = vec![0.0; 60];
    let st = unsafe { wc_scan_peaks(s, 8, 3.0, flags.as_mut_ptr(), adj.as_mut_ptr(), 60) };
    assert_eq!(st, WcStatus::Ok, "{}", last_error());
    assert_eq!(flags.iter().filter(|f| **f == 1).count(), 1);
    assert_eq!(flags[40], 1);
    assert!(adj[40] < 200.0);
    let st = unsafe { wc_scan_peaks(s, 8, 3.0, flags.as_mut_ptr(), adj.as_mut_ptr(), 59) };
    assert_eq!(st, WcStatus::Data);
    unsafe { wc_series_free(s) };
}

#[test]
fn version_and_null_frees() {
    let v = unsafe { CStr::from_ptr(wc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    unsafe {
        wc_series_free(ptr::null_mut());
        wc_model_free(ptr::null_mut());
        wc_forecast_free(ptr::null_mut());
        wc_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/weekcast.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c11", "-Wall", "-Werror", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/examples/demo.c"))
        .status()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success());
}
