//! C ABI over the weekcast engine.
//!
//! Objects are opaque handles created by `wc_*_new`/`wc_*_fit` style calls
//! and released with the matching `wc_*_free`. Every fallible call returns a
//! [`WcStatus`]; on failure `wc_last_error()` describes the problem. Strings
//! returned through out-pointers are owned by the caller and released with
//! `wc_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use weekcast::auto_order::{select_order, SearchMode, SearchSpace};
use chrono::NaiveDate;
use weekcast::error::ErrorClass;
use weekcast::eval::{mape, pinball, EvaluationPair};
use weekcast::io::pipeline::{calendar_flags, run_pipeline, usable_flags, PipelineConfig};
use weekcast::peaks::{scan_peaks, PeakConfig};
use weekcast::sarimax::{self, FitOptions, FittedSarimax, ForecastDistribution, SarimaOrder};
use weekcast::series::{self, ScenarioConfig, Transform, WeeklySeries};
use weekcast::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Usage = 3,
    Data = 4,
    Numerical = 5,
    Panic = 6,
}

/// Include the Black Friday / Cyber Monday flag as a regressor.
pub const WC_FLAG_PEAK: u32 = 1;
/// Include the default COVID scenario flag as a regressor.
pub const WC_FLAG_COVID: u32 = 2;

/// A weekly series.
pub struct WcSeries(WeeklySeries);

/// A fitted SARIMAX model.
pub struct WcModel(FittedSarimax);

/// A forecast distribution.
pub struct WcForecast(ForecastDistribution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WcStatus {
    match e.class() {
        ErrorClass::Usage => WcStatus::Usage,
        ErrorClass::Data => WcStatus::Data,
        ErrorClass::Numerical => WcStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Utf8,
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WcStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            WcStatus::NullArgument
        }
        Ok(Err(Failure::Utf8)) => {
            set_error("string argument is not valid UTF-8".into());
            WcStatus::InvalidUtf8
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            WcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8)
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

/// Message for the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn wc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version string (static).
#[no_mangle]
pub extern "C" fn wc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn wc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a series starting on the Monday `start_week` (`YYYY-MM-DD`).
///
/// # Safety
/// `name` and `start_week` must be NUL-terminated strings, `values` must point
/// to `len` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wc_series_new(
    name: *const c_char,
    start_week: *const c_char,
    values: *const f64,
    len: usize,
    out: *mut *mut WcSeries,
) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let name = str_arg(name, "name")?;
        let start = str_arg(start_week, "start_week")?;
        let date = NaiveDate::parse_from_str(start, "%Y-%m-%d")
            .map_err(|_| Error::BadParameter(format!("`{start}` is not a YYYY-MM-DD date")))?;
        let v = slice_arg(values, len, "values")?.to_vec();
        *out = Box::into_raw(Box::new(WcSeries(WeeklySeries::new(name, date, v)?)));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from `wc_series_new`, not freed before.
#[no_mangle]
pub unsafe extern "C" fn wc_series_free(s: *mut WcSeries) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a valid series handle.
#[no_mangle]
pub unsafe extern "C" fn wc_series_len(s: *const WcSeries) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

fn flag_names(flags: u32) -> Vec<String> {
    let mut v = Vec::new();
    if flags & WC_FLAG_PEAK != 0 {
        v.push("peak".to_string());
    }
    if flags & WC_FLAG_COVID != 0 {
        v.push("covid".to_string());
    }
    v
}

fn model_input(y: &WeeklySeries, log: bool) -> Result<WeeklySeries, Error> {
    if log {
        series::log_transform(y)
    } else {
        Ok(y.clone())
    }
}

/// Fits SARIMAX of order `order[7]` = {p, d, q, P, D, Q, s}.
/// `flags` is a combination of `WC_FLAG_PEAK` and `WC_FLAG_COVID`; `log` fits on logs.
/// Flags that are constant after differencing are left out.
///
/// # Safety
/// `series` must be a valid handle, `order` must point to 7 values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_sarimax_fit(
    series: *const WcSeries,
    order: *const usize,
    flags: u32,
    log: bool,
    seed: u64,
    out: *mut *mut WcModel,
) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let y = &ref_arg(series, "series")?.0;
        let o = slice_arg(order, 7, "order")?;
        let order = SarimaOrder::new(o[0], o[1], o[2]).seasonal(o[3], o[4], o[5], o[6]);
        let ym = model_input(y, log)?;
        let x = calendar_flags(&flag_names(flags), y.start_week(), y.len(), &ScenarioConfig::default())?;
        let (x, _) = usable_flags(x, y.len(), Some(&order));
        let m = sarimax::fit_with(&ym, &x, order, &FitOptions { seed, ..FitOptions::default() })?;
        *out = Box::into_raw(Box::new(WcModel(m)));
        Ok(())
    })
}

/// Selects the order by AICc over the default search space and fits it.
///
/// # Safety
/// `series` must be a valid handle and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_autofit(
    series: *const WcSeries,
    flags: u32,
    log: bool,
    stepwise: bool,
    seed: u64,
    out: *mut *mut WcModel,
) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let y = &ref_arg(series, "series")?.0;
        let ym = model_input(y, log)?;
        let x = calendar_flags(&flag_names(flags), y.start_week(), y.len(), &ScenarioConfig::default())?;
        let (x, _) = usable_flags(x, y.len(), None);
        let mode = if stepwise { SearchMode::Stepwise } else { SearchMode::Exhaustive };
        let space = SearchSpace { mode, seed, ..SearchSpace::default() };
        let r = select_order(&ym, &x, &space)?;
        *out = Box::into_raw(Box::new(WcModel(r.best)));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a model handle, not freed before.
#[no_mangle]
pub unsafe extern "C" fn wc_model_free(m: *mut WcModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a valid model handle.
#[no_mangle]
pub unsafe extern "C" fn wc_model_aicc(m: *const WcModel) -> f64 {
    m.as_ref().map_or(f64::NAN, |m| m.0.aicc)
}

/// Lossless JSON; release with `wc_string_free`.
///
/// # Safety
/// `m` must be a valid model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wc_model_to_json(m: *const WcModel, out: *mut *mut c_char) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = out_string(ref_arg(m, "model")?.0.to_json()?);
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wc_model_from_json(json: *const c_char, out: *mut *mut WcModel) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let m = FittedSarimax::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(WcModel(m)));
        Ok(())
    })
}

/// Forecasts `horizon` weeks past the end of `series`, which must be the
/// series the model was fitted on.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wc_forecast(
    model: *const WcModel,
    series: *const WcSeries,
    horizon: usize,
    out: *mut *mut WcForecast,
) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let m = &ref_arg(model, "model")?.0;
        let y = &ref_arg(series, "series")?.0;
        let ym = model_input(y, m.transform == Transform::Log)?;
        let all = calendar_flags(&m.exog_names, y.start_week(), y.len() + horizon, &ScenarioConfig::default())?;
        let hist = all.iter().map(|f| f.slice(0, y.len())).collect::<Result<Vec<_>, _>>()?;
        let fut = all.iter().map(|f| f.slice(y.len(), y.len() + horizon)).collect::<Result<Vec<_>, _>>()?;
        let fd = sarimax::forecast(m, &ym, &hist, &fut, horizon)?;
        *out = Box::into_raw(Box::new(WcForecast(fd)));
        Ok(())
    })
}

/// # Safety
/// `f` must be NULL or a forecast handle, not freed before.
#[no_mangle]
pub unsafe extern "C" fn wc_forecast_free(f: *mut WcForecast) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// # Safety
/// `f` must be a valid forecast handle.
#[no_mangle]
pub unsafe extern "C" fn wc_forecast_horizon(f: *const WcForecast) -> usize {
    f.as_ref().map_or(0, |f| f.0.horizon)
}

/// Quantile `tau` at step `h` (1-based), in levels.
///
/// # Safety
/// `f` must be a valid forecast handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wc_forecast_quantile(f: *const WcForecast, h: usize, tau: f64, out: *mut f64) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = sarimax::quantile(&ref_arg(f, "forecast")?.0, h, tau)?;
        Ok(())
    })
}

/// False-peak scan. Writes `len` flags (0/1) and adjusted values, where `len`
/// must equal the series length.
///
/// # Safety
/// `series` must be valid; `flags_out` and `adjusted_out` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn wc_scan_peaks(
    series: *const WcSeries,
    window_n: usize,
    k: f64,
    flags_out: *mut u8,
    adjusted_out: *mut f64,
    len: usize,
) -> WcStatus {
    guard(|| {
        let y = &ref_arg(series, "series")?.0;
        if flags_out.is_null() || adjusted_out.is_null() {
            return Err(Failure::Null("output buffer"));
        }
        if len != y.len() {
            return Err(Error::LengthMismatch { what: "output buffers".into(), expected: y.len(), got: len }.into());
        }
        let scan = scan_peaks(y, &PeakConfig::new(window_n, k)?)?;
        let flags = std::slice::from_raw_parts_mut(flags_out, len);
        let adj = std::slice::from_raw_parts_mut(adjusted_out, len);
        for i in 0..len {
            flags[i] = u8::from(scan.flags[i]);
            adj[i] = scan.adjusted.values()[i];
        }
        Ok(())
    })
}

/// Mean absolute percentage error, in percent.
///
/// # Safety
/// `actual` and `predicted` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_mape(actual: *const f64, predicted: *const f64, n: usize, out: *mut f64) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = EvaluationPair::new(slice_arg(actual, n, "actual")?.to_vec(), slice_arg(predicted, n, "predicted")?.to_vec())?;
        *out = mape(&p)?;
        Ok(())
    })
}

/// Mean pinball loss at quantile level `tau`.
///
/// # Safety
/// `actual` and `predicted` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_pinball(actual: *const f64, predicted: *const f64, n: usize, tau: f64, out: *mut f64) -> WcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = EvaluationPair::new(slice_arg(actual, n, "actual")?.to_vec(), slice_arg(predicted, n, "predicted")?.to_vec())?;
        *out = pinball(&p, tau)?;
        Ok(())
    })
}

/// Runs the pipeline from a JSON configuration; `run_dir` receives the path of
/// the new run directory (release with `wc_string_free`).
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `run_dir` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wc_pipeline_run(config_json: *const c_char, run_dir: *mut *mut c_char) -> WcStatus {
    guard(|| {
        if run_dir.is_null() {
            return Err(Failure::Null("run_dir"));
        }
        let cfg = PipelineConfig::from_json(str_arg(config_json, "config_json")?)?;
        let dir = run_pipeline(&cfg)?;
        *run_dir = out_string(dir.display().to_string());
        Ok(())
    })
}
