//! Seasonal ARIMA with exogenous regressors.
//!
//! The series is differenced `d` times at lag 1 and `D` times at lag `s`; the
//! differenced series is modeled as a linear regression on the (equally
//! differenced) regressors with ARMA errors. ARMA parameters are estimated by
//! exact Gaussian maximum likelihood (Kalman filter, sigma2 concentrated out,
//! Nelder-Mead on the unconstrained partial-autocorrelation scale); regression
//! coefficients by GLS, alternating twice.

pub mod kalman;
pub mod nelder_mead;
pub mod poly;

use std::fmt;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::series::{FlagSeries, Transform, WeeklySeries};
use kalman::{ArmaModel, Innovations};
use nelder_mead::NelderMeadOptions;

pub const MAX_P: usize = 5;
pub const MAX_Q: usize = 5;
pub const MAX_SEASONAL_P: usize = 2;
pub const MAX_SEASONAL_Q: usize = 2;
pub const MAX_D: usize = 2;

/// `(p,d,q)(P,D,Q)_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SarimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub period: usize,
}

impl SarimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Self {
        SarimaOrder { p, d, q, seasonal_p: 0, seasonal_d: 0, seasonal_q: 0, period: 52 }
    }

    pub fn seasonal(self, seasonal_p: usize, seasonal_d: usize, seasonal_q: usize, period: usize) -> Self {
        SarimaOrder { seasonal_p, seasonal_d, seasonal_q, period, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > MAX_P || self.q > MAX_Q {
            return Err(Error::BadParameter(format!("{self}: p and q are limited to {MAX_P}")));
        }
        if self.seasonal_p > MAX_SEASONAL_P || self.seasonal_q > MAX_SEASONAL_Q {
            return Err(Error::BadParameter(format!("{self}: P and Q are limited to {MAX_SEASONAL_P}")));
        }
        if self.d > MAX_D || self.seasonal_d > MAX_D {
            return Err(Error::BadParameter(format!("{self}: d and D are limited to {MAX_D}")));
        }
        if self.has_seasonal_part() && self.period < 2 {
            return Err(Error::BadParameter(format!("{self}: seasonal period must be at least 2")));
        }
        Ok(())
    }

    pub fn has_seasonal_part(&self) -> bool {
        self.seasonal_p + self.seasonal_d + self.seasonal_q > 0
    }

    /// Observations consumed by differencing.
    pub fn lost(&self) -> usize {
        self.d + self.period * self.seasonal_d
    }

    pub fn n_arma(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q
    }

    pub fn has_intercept(&self) -> bool {
        self.d + self.seasonal_d == 0
    }
}

impl fmt::Display for SarimaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})[{}]",
            self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.period
        )
    }
}

/// A fully specified parameter point, used for direct likelihood evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaxParams {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub seasonal_ar: Vec<f64>,
    pub seasonal_ma: Vec<f64>,
    /// Ignored (must be 0) when the order differences the series.
    pub intercept: f64,
    pub exog_betas: Vec<f64>,
    pub sigma2: f64,
}

impl SarimaxParams {
    pub fn white_noise(sigma2: f64) -> Self {
        SarimaxParams {
            ar: vec![],
            ma: vec![],
            seasonal_ar: vec![],
            seasonal_ma: vec![],
            intercept: 0.0,
            exog_betas: vec![],
            sigma2,
        }
    }
}

pub const MODEL_FORMAT: &str = "weekcast.sarimax";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSarimax {
    pub format: String,
    pub version: u32,
    pub order: SarimaOrder,
    pub ar_coeffs: Vec<f64>,
    pub ma_coeffs: Vec<f64>,
    pub seasonal_ar_coeffs: Vec<f64>,
    pub seasonal_ma_coeffs: Vec<f64>,
    pub intercept: Option<f64>,
    pub exog_names: Vec<String>,
    pub exog_betas: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub aicc: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub transform: Transform,
    pub converged: bool,
}

impl FittedSarimax {
    pub fn params(&self) -> SarimaxParams {
        SarimaxParams {
            ar: self.ar_coeffs.clone(),
            ma: self.ma_coeffs.clone(),
            seasonal_ar: self.seasonal_ar_coeffs.clone(),
            seasonal_ma: self.seasonal_ma_coeffs.clone(),
            intercept: self.intercept.unwrap_or(0.0),
            exog_betas: self.exog_betas.clone(),
            sigma2: self.sigma2,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: FittedSarimax = serde_json::from_str(s).map_err(|e| Error::Config(format!("model JSON: {e}")))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::Config(format!("unsupported model document {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    fn arma_model(&self) -> ArmaModel {
        arma_from_coeffs(&self.order, &self.ar_coeffs, &self.ma_coeffs, &self.seasonal_ar_coeffs, &self.seasonal_ma_coeffs)
    }

    fn betas_with_intercept(&self) -> Vec<f64> {
        let mut b = self.exog_betas.clone();
        if let Some(c) = self.intercept {
            b.push(c);
        }
        b
    }
}

/// Predictive distribution over a forecast horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub start_week: NaiveDate,
    pub horizon: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub transform: Transform,
}

impl ForecastDistribution {
    pub fn week(&self, h: usize) -> NaiveDate {
        self.start_week + Duration::weeks(h as i64 - 1)
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub seed: u64,
    pub restarts: usize,
    pub gls_iterations: usize,
    pub optimizer: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { seed: 0, restarts: 3, gls_iterations: 2, optimizer: NelderMeadOptions::default() }
    }
}

/// Differenced response and regressors ready for estimation.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub w: Vec<f64>,
    /// Differenced regressor columns: exogenous flags, then the intercept if any.
    pub xw: Vec<Vec<f64>>,
    pub exog_names: Vec<String>,
    pub has_intercept: bool,
}

pub(crate) fn apply_differencing(x: &[f64], order: &SarimaOrder) -> Vec<f64> {
    let mut out = x.to_vec();
    for _ in 0..order.d {
        out = crate::series::difference(&out, 1);
    }
    for _ in 0..order.seasonal_d {
        out = crate::series::difference(&out, order.period);
    }
    out
}

fn check_exog(y: &WeeklySeries, exog: &[FlagSeries]) -> Result<()> {
    for f in exog {
        f.check_aligned(y)?;
    }
    Ok(())
}

pub(crate) fn design(y: &WeeklySeries, exog: &[FlagSeries], order: &SarimaOrder) -> Result<Design> {
    order.validate()?;
    check_exog(y, exog)?;
    let lost = order.lost();
    if y.len() <= lost {
        return Err(Error::SeriesTooShort { needed: lost + 1, got: y.len() });
    }
    let w = apply_differencing(y.values(), order);
    let mut xw: Vec<Vec<f64>> = exog.iter().map(|f| apply_differencing(&f.as_f64(), order)).collect();
    let has_intercept = order.has_intercept();
    if has_intercept {
        xw.push(vec![1.0; w.len()]);
    }
    Ok(Design { w, xw, exog_names: exog.iter().map(|f| f.name().to_string()).collect(), has_intercept })
}

fn arma_from_coeffs(order: &SarimaOrder, ar: &[f64], ma: &[f64], sar: &[f64], sma: &[f64]) -> ArmaModel {
    ArmaModel::new(poly::expand_ar(ar, sar, order.period), poly::expand_ma(ma, sma, order.period))
}

struct Coeffs {
    ar: Vec<f64>,
    ma: Vec<f64>,
    sar: Vec<f64>,
    sma: Vec<f64>,
}

fn constrain(order: &SarimaOrder, raw: &[f64]) -> Coeffs {
    let (p, q, sp) = (order.p, order.q, order.seasonal_p);
    Coeffs {
        ar: poly::constrain_ar(&raw[..p]),
        ma: poly::constrain_ma(&raw[p..p + q]),
        sar: poly::constrain_ar(&raw[p + q..p + q + sp]),
        sma: poly::constrain_ma(&raw[p + q + sp..]),
    }
}

fn residuals(d: &Design, betas: &[f64]) -> Vec<f64> {
    let mut u = d.w.clone();
    for (col, b) in d.xw.iter().zip(betas) {
        for (ui, xi) in u.iter_mut().zip(col) {
            *ui -= b * xi;
        }
    }
    u
}

/// Weighted least squares of `v_w` on columns `v_x`, weights `1/f`.
fn weighted_ls(v_w: &[f64], v_x: &[Vec<f64>], f: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = v_w.len();
    let k = v_x.len();
    let scale = |i: usize| f.map(|f| 1.0 / f[i].sqrt()).unwrap_or(1.0);
    let a = DMatrix::from_fn(n, k, |i, j| v_x[j][i] * scale(i));
    let b = DVector::from_fn(n, |i, _| v_w[i] * scale(i));
    let svd = a.svd(true, true);
    let sol = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares: {e}")))?;
    Ok(sol.iter().copied().collect())
}

fn check_regressors(d: &Design) -> Result<()> {
    if d.xw.is_empty() {
        return Ok(());
    }
    for (j, col) in d.xw.iter().enumerate().take(d.exog_names.len()) {
        if col.iter().all(|x| x.abs() < 1e-12) {
            return Err(Error::DegenerateExog(format!(
                "`{}` is identically zero after differencing",
                d.exog_names[j]
            )));
        }
    }
    let n = d.w.len();
    let a = DMatrix::from_fn(n, d.xw.len(), |i, j| d.xw[j][i]);
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 1e-10 * max) {
        return Err(Error::DegenerateExog("regressors are collinear".into()));
    }
    Ok(())
}

fn objective(order: &SarimaOrder, u: &[f64], raw: &[f64]) -> f64 {
    let c = constrain(order, raw);
    let model = arma_from_coeffs(order, &c.ar, &c.ma, &c.sar, &c.sma);
    match kalman::innovations(u, &model) {
        Some(inn) => -inn.concentrated_loglik(),
        None => f64::INFINITY,
    }
}

/// Optimizes the ARMA part for fixed regression residuals `u`.
fn optimize_arma(order: &SarimaOrder, u: &[f64], start: &[f64], opts: &FitOptions, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
    let obj = |x: &[f64]| objective(order, u, x);
    let first = nelder_mead::minimize(obj, start, &opts.optimizer);
    let mut best = first.x;
    let mut best_f = first.f;
    let mut converged = first.converged;
    for _ in 0..opts.restarts {
        if best.is_empty() {
            break;
        }
        let jittered: Vec<f64> = best.iter().map(|x| x + rng.gen_range(-0.1..0.1)).collect();
        let run = nelder_mead::minimize(obj, &jittered, &opts.optimizer);
        let improvement = best_f - run.f;
        if run.f < best_f {
            best = run.x;
            best_f = run.f;
        }
        converged |= run.converged;
        if converged && improvement < 1e-7 {
            break;
        }
    }
    (best, best_f, converged && best_f.is_finite())
}

/// Number of free parameters counted by AICc: ARMA + regression + variance.
pub fn parameter_count(order: &SarimaOrder, n_exog: usize) -> usize {
    order.n_arma() + n_exog + order.has_intercept() as usize + 1
}

/// Minimum series length for which `fit` accepts `order`.
pub fn min_length(order: &SarimaOrder, n_exog: usize) -> usize {
    order.lost() + parameter_count(order, n_exog) - 1 + 5
}

pub fn fit(y: &WeeklySeries, exog: &[FlagSeries], order: SarimaOrder) -> Result<FittedSarimax> {
    fit_with(y, exog, order, &FitOptions::default())
}

pub fn fit_with(y: &WeeklySeries, exog: &[FlagSeries], order: SarimaOrder, opts: &FitOptions) -> Result<FittedSarimax> {
    let d = design(y, exog, &order)?;
    let n_free = parameter_count(&order, exog.len()) - 1;
    if d.w.len() < n_free + 5 {
        return Err(Error::SeriesTooShort { needed: min_length(&order, exog.len()), got: y.len() });
    }
    check_regressors(&d)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut betas = if d.xw.is_empty() { Vec::new() } else { weighted_ls(&d.w, &d.xw, None)? };
    let mut raw = vec![0.0; order.n_arma()];
    let mut converged = false;
    for _ in 0..opts.gls_iterations.max(1) {
        let u = residuals(&d, &betas);
        let (x, _, ok) = optimize_arma(&order, &u, &raw, opts, &mut rng);
        raw = x;
        converged = ok;
        if !d.xw.is_empty() {
            let c = constrain(&order, &raw);
            let model = arma_from_coeffs(&order, &c.ar, &c.ma, &c.sar, &c.sma);
            let inn_w = kalman::innovations(&d.w, &model).ok_or(Error::NonConvergence)?;
            let inn_x: Vec<Vec<f64>> = d
                .xw
                .iter()
                .map(|col| kalman::innovations(col, &model).map(|i| i.v).ok_or(Error::NonConvergence))
                .collect::<Result<_>>()?;
            betas = weighted_ls(&inn_w.v, &inn_x, Some(&inn_w.f))?;
        }
    }
    if !converged {
        return Err(Error::NonConvergence);
    }

    let c = constrain(&order, &raw);
    let model = arma_from_coeffs(&order, &c.ar, &c.ma, &c.sar, &c.sma);
    let inn = kalman::innovations(&residuals(&d, &betas), &model).ok_or(Error::NonConvergence)?;
    let sigma2 = inn.sigma2_hat();
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Numerical(format!("innovation variance {sigma2}")));
    }
    let loglik = inn.loglik(sigma2, 0);
    let n_params = parameter_count(&order, exog.len());
    let n_obs = d.w.len();
    let aicc = crate::auto_order::aicc(loglik, n_params, n_obs)?;

    let n_exog = d.exog_names.len();
    Ok(FittedSarimax {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        order,
        ar_coeffs: c.ar,
        ma_coeffs: c.ma,
        seasonal_ar_coeffs: c.sar,
        seasonal_ma_coeffs: c.sma,
        intercept: d.has_intercept.then(|| betas[n_exog]),
        exog_names: d.exog_names,
        exog_betas: betas[..n_exog].to_vec(),
        sigma2,
        loglik,
        aicc,
        n_obs,
        n_params,
        transform: y.transform(),
        converged,
    })
}

fn check_params(order: &SarimaOrder, n_exog: usize, p: &SarimaxParams) -> Result<()> {
    let dims = [
        ("ar", p.ar.len(), order.p),
        ("ma", p.ma.len(), order.q),
        ("seasonal_ar", p.seasonal_ar.len(), order.seasonal_p),
        ("seasonal_ma", p.seasonal_ma.len(), order.seasonal_q),
        ("exog_betas", p.exog_betas.len(), n_exog),
    ];
    for (what, got, expected) in dims {
        if got != expected {
            return Err(Error::LengthMismatch { what: what.into(), expected, got });
        }
    }
    if !(p.sigma2 > 0.0 && p.sigma2.is_finite()) {
        return Err(Error::BadParameter(format!("sigma2 must be positive, got {}", p.sigma2)));
    }
    if !order.has_intercept() && p.intercept != 0.0 {
        return Err(Error::BadParameter("intercept is not identified for differenced models".into()));
    }
    if !poly::is_stationary(&p.ar) {
        return Err(Error::NonStationaryParams(format!("AR {:?}", p.ar)));
    }
    if !poly::is_stationary(&p.seasonal_ar) {
        return Err(Error::NonStationaryParams(format!("seasonal AR {:?}", p.seasonal_ar)));
    }
    if !poly::is_invertible(&p.ma) {
        return Err(Error::NonStationaryParams(format!("MA {:?}", p.ma)));
    }
    if !poly::is_invertible(&p.seasonal_ma) {
        return Err(Error::NonStationaryParams(format!("seasonal MA {:?}", p.seasonal_ma)));
    }
    Ok(())
}

pub(crate) fn innovations_at(
    y: &WeeklySeries,
    exog: &[FlagSeries],
    order: &SarimaOrder,
    params: &SarimaxParams,
) -> Result<Innovations> {
    let d = design(y, exog, order)?;
    check_params(order, exog.len(), params)?;
    let mut betas = params.exog_betas.clone();
    if d.has_intercept {
        betas.push(params.intercept);
    }
    let model = arma_from_coeffs(order, &params.ar, &params.ma, &params.seasonal_ar, &params.seasonal_ma);
    kalman::innovations(&residuals(&d, &betas), &model)
        .ok_or_else(|| Error::Numerical("Kalman recursion broke down".into()))
}

/// Exact Gaussian log-likelihood of the differenced, regression-adjusted series.
pub fn loglikelihood(y: &WeeklySeries, exog: &[FlagSeries], order: &SarimaOrder, params: &SarimaxParams) -> Result<f64> {
    Ok(innovations_at(y, exog, order, params)?.loglik(params.sigma2, 0))
}

/// One-step-ahead in-sample predictions; `None` for weeks consumed by differencing.
pub fn fitted_values(m: &FittedSarimax, y: &WeeklySeries, exog: &[FlagSeries]) -> Result<Vec<Option<f64>>> {
    let inn = innovations_at(y, exog, &m.order, &m.params())?;
    let lost = m.order.lost();
    Ok((0..y.len()).map(|t| (t >= lost).then(|| y.values()[t] - inn.v[t - lost])).collect())
}

fn future_columns(m: &FittedSarimax, y: &WeeklySeries, exog_future: &[FlagSeries], horizon: usize) -> Result<Vec<Vec<f64>>> {
    let expected_start = y.end_week() + Duration::weeks(1);
    m.exog_names
        .iter()
        .map(|name| {
            let f = exog_future
                .iter()
                .find(|f| f.name() == name)
                .ok_or_else(|| Error::MissingFutureExog(format!("no future values for `{name}`")))?;
            if f.start_week() != expected_start {
                return Err(Error::MissingFutureExog(format!(
                    "`{name}` future values start {} but the forecast starts {expected_start}",
                    f.start_week()
                )));
            }
            if f.len() < horizon {
                return Err(Error::MissingFutureExog(format!(
                    "`{name}` has {} future values, horizon is {horizon}",
                    f.len()
                )));
            }
            Ok(f.as_f64()[..horizon].to_vec())
        })
        .collect()
}

/// Forecasts `horizon` weeks past the end of `y`.
///
/// `exog` are the in-sample regressors used for fitting, `exog_future` their
/// continuation (matched by name, starting the week after `y` ends).
pub fn forecast(
    m: &FittedSarimax,
    y: &WeeklySeries,
    exog: &[FlagSeries],
    exog_future: &[FlagSeries],
    horizon: usize,
) -> Result<ForecastDistribution> {
    if horizon == 0 {
        return Err(Error::BadParameter("horizon must be at least 1".into()));
    }
    let order = m.order;
    let d = design(y, exog, &order)?;
    if d.exog_names != m.exog_names {
        return Err(Error::Misaligned(format!(
            "model was fitted with regressors {:?}, got {:?}",
            m.exog_names, d.exog_names
        )));
    }
    let fut = future_columns(m, y, exog_future, horizon)?;

    // Differenced regression effect over the horizon, computed on the joined regressors.
    let betas = m.betas_with_intercept();
    let mut future_effect = vec![0.0; horizon];
    for (j, name) in m.exog_names.iter().enumerate() {
        let flag = exog.iter().find(|f| f.name() == name).expect("aligned by design()");
        let mut joined = flag.as_f64();
        joined.extend_from_slice(&fut[j]);
        let diffed = apply_differencing(&joined, &order);
        let tail = &diffed[diffed.len() - horizon..];
        for (e, x) in future_effect.iter_mut().zip(tail) {
            *e += betas[j] * x;
        }
    }
    if let Some(c) = m.intercept {
        future_effect.iter_mut().for_each(|e| *e += c);
    }

    let model = m.arma_model();
    let u = residuals(&d, &betas);
    let out = kalman::filter(&u, &model).ok_or_else(|| Error::Numerical("Kalman filter broke down".into()))?;
    let r = model.state_dim();

    // Augmented state: ARMA state (r) followed by the most recent `lost` levels of y.
    let delta = poly::differencing_poly(order.d, order.seasonal_d, order.period);
    let lost = delta.len();
    let dim = r + lost;
    let mut mean = vec![0.0; dim];
    mean[..r].copy_from_slice(&out.next_state);
    let yv = y.values();
    for k in 0..lost {
        mean[r + k] = yv[yv.len() - 1 - k];
    }
    let mut cov = vec![0.0; dim * dim];
    for i in 0..r {
        for j in 0..r {
            cov[i * dim + j] = out.next_cov[i * r + j] * m.sigma2;
        }
    }
    let ar = model.ar().to_vec();
    let rvec: Vec<f64> = (0..r).map(|i| if i == 0 { 1.0 } else { model.ma().get(i - 1).copied().unwrap_or(0.0) }).collect();

    // x_{t+1} = A x_t + c_t + noise, where the level row is y_t = alpha_t[0] + c_t - delta' hist.
    let step = |x: &[f64], shift: f64| -> Vec<f64> {
        let mut nx = vec![0.0; dim];
        for i in 0..r - 1 {
            nx[i] = x[i + 1];
        }
        for (i, a) in ar.iter().enumerate() {
            nx[i] += a * x[0];
        }
        if lost > 0 {
            let mut level = x[0] + shift;
            for k in 0..lost {
                level -= delta[k] * x[r + k];
            }
            nx[r] = level;
            for k in 1..lost {
                nx[r + k] = x[r + k - 1];
            }
        }
        nx
    };
    let level_of = |x: &[f64], shift: f64| -> f64 {
        let mut level = x[0] + shift;
        for k in 0..lost {
            level -= delta[k] * x[r + k];
        }
        level
    };

    let mut means = Vec::with_capacity(horizon);
    let mut variances = Vec::with_capacity(horizon);
    for h in 0..horizon {
        means.push(level_of(&mean, future_effect[h]));
        // Var(y) = g' P g with g = (1, 0.., -delta).
        let mut var = 0.0;
        for i in 0..dim {
            let gi = if i == 0 { 1.0 } else if i >= r { -delta[i - r] } else { 0.0 };
            if gi == 0.0 {
                continue;
            }
            for j in 0..dim {
                let gj = if j == 0 { 1.0 } else if j >= r { -delta[j - r] } else { 0.0 };
                if gj != 0.0 {
                    var += gi * gj * cov[i * dim + j];
                }
            }
        }
        variances.push(var.max(0.0));

        mean = step(&mean, future_effect[h]);
        // cov <- A cov A' + sigma2 R R' (noise enters the ARMA block only).
        let mut tmp = vec![0.0; dim * dim];
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            for i in 0..dim {
                col[i] = cov[i * dim + j];
            }
            let res = step(&col, 0.0);
            for i in 0..dim {
                tmp[i * dim + j] = res[i];
            }
        }
        for i in 0..dim {
            let res = step(&tmp[i * dim..(i + 1) * dim], 0.0);
            for j in 0..dim {
                cov[j * dim + i] = res[j];
            }
        }
        for i in 0..r {
            for j in 0..r {
                cov[i * dim + j] += m.sigma2 * rvec[i] * rvec[j];
            }
        }
    }

    Ok(ForecastDistribution {
        start_week: y.end_week() + Duration::weeks(1),
        horizon,
        means,
        variances,
        transform: m.transform,
    })
}

/// Quantile `tau` of the predictive distribution at step `h` (1-based),
/// mapped back to levels for log-space forecasts.
pub fn quantile(f: &ForecastDistribution, h: usize, tau: f64) -> Result<f64> {
    if h == 0 || h > f.horizon {
        return Err(Error::HorizonOutOfRange { step: h, horizon: f.horizon });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::TauOutOfRange(tau));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(tau);
    let q = f.means[h - 1] + z * f.variances[h - 1].sqrt();
    Ok(match f.transform {
        Transform::Identity => q,
        Transform::Log => q.exp(),
    })
}
