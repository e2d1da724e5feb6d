//! Error metrics, baseline forecasters, the trailing year-over-year benchmark
//! and rolling-origin backtests.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sarimax::{self, FitOptions, SarimaOrder};
use crate::series::{self, FlagSeries, WeeklySeries};

pub const SEASON: usize = 52;
pub const YOY_TRAILING_WEEKS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPair {
    actual: Vec<f64>,
    predicted: Vec<f64>,
}

impl EvaluationPair {
    pub fn new(actual: Vec<f64>, predicted: Vec<f64>) -> Result<Self> {
        if actual.is_empty() {
            return Err(Error::SeriesTooShort { needed: 1, got: 0 });
        }
        if actual.len() != predicted.len() {
            return Err(Error::LengthMismatch { what: "predicted".into(), expected: actual.len(), got: predicted.len() });
        }
        if let Some(index) = actual.iter().chain(&predicted).position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index: index % actual.len() });
        }
        Ok(EvaluationPair { actual, predicted })
    }

    pub fn actual(&self) -> &[f64] {
        &self.actual
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.actual.iter().copied().zip(self.predicted.iter().copied())
    }
}

pub fn mape(p: &EvaluationPair) -> Result<f64> {
    if let Some(index) = p.actual.iter().position(|&a| a == 0.0) {
        return Err(Error::ZeroActual { index });
    }
    Ok(p.pairs().map(|(a, f)| ((a - f) / a).abs()).sum::<f64>() / p.len() as f64 * 100.0)
}

pub fn rmse(p: &EvaluationPair) -> f64 {
    (p.pairs().map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / p.len() as f64).sqrt()
}

pub fn pinball(p: &EvaluationPair, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::TauOutOfRange(tau));
    }
    Ok(p.pairs().map(|(a, f)| pinball_term(a, f, tau)).sum::<f64>() / p.len() as f64)
}

fn pinball_term(a: f64, f: f64, tau: f64) -> f64 {
    if a >= f {
        tau * (a - f)
    } else {
        (1.0 - tau) * (f - a)
    }
}

/// Scales last year's values by the mean year-over-year ratio of the last 12 weeks.
pub fn trailing_yoy_benchmark(y: &WeeklySeries, horizon: usize) -> Result<Vec<f64>> {
    let v = y.values();
    let n = v.len();
    if n < SEASON + YOY_TRAILING_WEEKS {
        return Err(Error::SeriesTooShort { needed: SEASON + YOY_TRAILING_WEEKS, got: n });
    }
    let mut g = 0.0;
    for t in n - YOY_TRAILING_WEEKS..n {
        let base = v[t - SEASON];
        if base == 0.0 {
            return Err(Error::ZeroLagValue { index: t - SEASON });
        }
        g += v[t] / base;
    }
    g /= YOY_TRAILING_WEEKS as f64;
    let mut out: Vec<f64> = Vec::with_capacity(horizon);
    for h in 1..=horizon {
        // index T + h - 52 relative to the last observation T = n - 1
        let idx = n - 1 + h - SEASON;
        let base = if idx < n { v[idx] } else { out[idx - n] };
        out.push(g * base);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineMethod {
    Naive,
    SeasonalNaive,
    MovingAverage { window: usize },
    Ses { alpha: f64 },
}

impl BaselineMethod {
    pub fn label(&self) -> String {
        match self {
            BaselineMethod::Naive => "naive".into(),
            BaselineMethod::SeasonalNaive => "seasonal_naive".into(),
            BaselineMethod::MovingAverage { window } => format!("moving_average_{window}"),
            BaselineMethod::Ses { alpha } => format!("ses_{alpha}"),
        }
    }

    /// Naive, seasonal naive, moving averages over 2, 3, 4, 7 weeks and SES(0.3).
    pub fn default_set() -> Vec<BaselineMethod> {
        let mut v = vec![BaselineMethod::Naive, BaselineMethod::SeasonalNaive];
        v.extend([2, 3, 4, 7].map(|window| BaselineMethod::MovingAverage { window }));
        v.push(BaselineMethod::Ses { alpha: 0.3 });
        v
    }
}

pub fn baseline_forecast(y: &WeeklySeries, method: BaselineMethod, horizon: usize) -> Result<Vec<f64>> {
    let v = y.values();
    let n = v.len();
    match method {
        BaselineMethod::Naive => Ok(vec![v[n - 1]; horizon]),
        BaselineMethod::SeasonalNaive => {
            if n < SEASON {
                return Err(Error::SeriesTooShort { needed: SEASON, got: n });
            }
            let mut out: Vec<f64> = Vec::with_capacity(horizon);
            for h in 1..=horizon {
                let idx = n - 1 + h - SEASON;
                out.push(if idx < n { v[idx] } else { out[idx - n] });
            }
            Ok(out)
        }
        BaselineMethod::MovingAverage { window } => {
            if window == 0 {
                return Err(Error::BadParameter("moving-average window must be positive".into()));
            }
            if n < window {
                return Err(Error::SeriesTooShort { needed: window, got: n });
            }
            let m = v[n - window..].iter().sum::<f64>() / window as f64;
            Ok(vec![m; horizon])
        }
        BaselineMethod::Ses { alpha } => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::BadParameter(format!("SES alpha {alpha} outside (0, 1]")));
            }
            let mut level = v[0];
            for &x in &v[1..] {
                level = alpha * x + (1.0 - alpha) * level;
            }
            Ok(vec![level; horizon])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktestPlan {
    pub initial_train_weeks: usize,
    pub step_weeks: usize,
    pub horizon_weeks: usize,
    pub n_folds: usize,
}

impl BacktestPlan {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.n_folds == 0 || self.horizon_weeks == 0 || self.initial_train_weeks == 0 {
            return Err(Error::BadParameter("backtest plan needs positive folds, horizon and training window".into()));
        }
        if self.n_folds > 1 && self.step_weeks == 0 {
            return Err(Error::BadParameter("step_weeks must be positive with several folds".into()));
        }
        let needed = self.n_folds * self.step_weeks + self.initial_train_weeks + self.horizon_weeks;
        if needed > len {
            return Err(Error::PlanTooLarge { needed, got: len });
        }
        Ok(())
    }

    /// `(train_end, test_end)` per fold; training is `0..train_end`, testing `train_end..test_end`.
    pub fn folds(&self) -> Vec<(usize, usize)> {
        (0..self.n_folds)
            .map(|i| {
                let train_end = self.initial_train_weeks + i * self.step_weeks;
                (train_end, train_end + self.horizon_weeks)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Baseline { method: BaselineMethod },
    TrailingYoy,
    /// SARIMAX with all supplied flags as regressors, optionally fit on log values.
    Sarimax { order: SarimaOrder, log: bool },
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Baseline { method } => method.label(),
            ModelSpec::TrailingYoy => "trailing_yoy".into(),
            ModelSpec::Sarimax { order, .. } => format!("sarimax{order}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub mape: f64,
    pub rmse: f64,
    pub pinball50: f64,
    pub pinball90: f64,
    pub actual: Vec<f64>,
    pub p50: Vec<f64>,
    pub p90: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub model: String,
    pub folds: Vec<FoldResult>,
    pub mean_mape: f64,
    pub mean_rmse: f64,
    pub mean_pinball50: f64,
    pub mean_pinball90: f64,
}

impl BacktestReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,fold,train_start,train_end,test_start,test_end,mape,rmse,pinball50,pinball90\n");
        for f in &self.folds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.model, f.fold, f.train_start, f.train_end, f.test_start, f.test_end, f.mape, f.rmse, f.pinball50, f.pinball90
            ));
        }
        out
    }
}

fn forecast_fold(y: &WeeklySeries, exog: &[FlagSeries], spec: &ModelSpec, train_end: usize, horizon: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let train = y.slice(0, train_end)?;
    match spec {
        ModelSpec::Baseline { method } => {
            let f = baseline_forecast(&train, *method, horizon)?;
            Ok((f.clone(), f))
        }
        ModelSpec::TrailingYoy => {
            let f = trailing_yoy_benchmark(&train, horizon)?;
            Ok((f.clone(), f))
        }
        ModelSpec::Sarimax { order, log } => {
            let train_model = if *log { series::log_transform(&train)? } else { train };
            let x_train: Vec<FlagSeries> = exog.iter().map(|f| f.slice(0, train_end)).collect::<Result<_>>()?;
            let x_future: Vec<FlagSeries> = exog.iter().map(|f| f.slice(train_end, train_end + horizon)).collect::<Result<_>>()?;
            let m = sarimax::fit_with(&train_model, &x_train, *order, &FitOptions::default())?;
            let fd = sarimax::forecast(&m, &train_model, &x_train, &x_future, horizon)?;
            let p50 = (1..=horizon).map(|h| sarimax::quantile(&fd, h, 0.5)).collect::<Result<Vec<_>>>()?;
            let p90 = (1..=horizon).map(|h| sarimax::quantile(&fd, h, 0.9)).collect::<Result<Vec<_>>>()?;
            Ok((p50, p90))
        }
    }
}

pub fn backtest(y: &WeeklySeries, exog: &[FlagSeries], spec: &ModelSpec, plan: &BacktestPlan) -> Result<BacktestReport> {
    plan.validate(y.len())?;
    for f in exog {
        f.check_aligned(y)?;
    }
    let folds = plan.folds();
    let results: Vec<Result<FoldResult>> = folds
        .par_iter()
        .enumerate()
        .map(|(i, &(train_end, test_end))| {
            let (p50, p90) = forecast_fold(y, exog, spec, train_end, plan.horizon_weeks)?;
            let actual = y.values()[train_end..test_end].to_vec();
            let mid = EvaluationPair::new(actual.clone(), p50.clone())?;
            let upper = EvaluationPair::new(actual.clone(), p90.clone())?;
            Ok(FoldResult {
                fold: i,
                train_start: y.week(0),
                train_end: y.week(train_end - 1),
                test_start: y.week(train_end),
                test_end: y.week(test_end - 1),
                mape: mape(&mid)?,
                rmse: rmse(&mid),
                pinball50: pinball(&mid, 0.5)?,
                pinball90: pinball(&upper, 0.9)?,
                actual,
                p50,
                p90,
            })
        })
        .collect();
    let folds: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;
    let mean = |f: fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    Ok(BacktestReport {
        model: spec.label(),
        mean_mape: mean(|f| f.mape),
        mean_rmse: mean(|f| f.rmse),
        mean_pinball50: mean(|f| f.pinball50),
        mean_pinball90: mean(|f| f.pinball90),
        folds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateError {
    /// Mean of the per-series mean pinball losses.
    pub macro_avg: f64,
    /// Pinball loss pooled over every forecast point of every series.
    pub micro_avg: f64,
}

/// Aggregate 90% weighted error over several backtest reports (one per series).
pub fn aggregate_pinball90(reports: &[BacktestReport]) -> Result<AggregateError> {
    if reports.is_empty() {
        return Err(Error::BadParameter("no reports to aggregate".into()));
    }
    let mut per_series = Vec::with_capacity(reports.len());
    let mut total = 0.0;
    let mut count = 0usize;
    for r in reports {
        let mut s = 0.0;
        let mut c = 0usize;
        for f in &r.folds {
            for (a, q) in f.actual.iter().zip(&f.p90) {
                s += pinball_term(*a, *q, 0.9);
                c += 1;
            }
        }
        if c == 0 {
            return Err(Error::BadParameter(format!("report {} has no forecast points", r.model)));
        }
        per_series.push(s / c as f64);
        total += s;
        count += c;
    }
    Ok(AggregateError { macro_avg: per_series.iter().sum::<f64>() / per_series.len() as f64, micro_avg: total / count as f64 })
}
