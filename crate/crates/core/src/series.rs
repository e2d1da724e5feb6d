//! Weekly series container, transforms and event-flag construction.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::calendar::{self, IsoWeekId};
use crate::error::{Error, Result};

/// Space in which the values of a series live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Log,
}

/// Consecutive weekly observations indexed by the Monday of each ISO week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySeries {
    name: String,
    start_week: NaiveDate,
    values: Vec<f64>,
    #[serde(default)]
    transform: Transform,
}

impl WeeklySeries {
    pub fn new(name: impl Into<String>, start_week: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if start_week.weekday() != Weekday::Mon {
            return Err(Error::BadParameter(format!("series start {start_week} is not a Monday")));
        }
        if values.is_empty() {
            return Err(Error::SeriesTooShort { needed: 1, got: 0 });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(WeeklySeries { name: name.into(), start_week, values, transform: Transform::Identity })
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start_week(&self) -> NaiveDate {
        self.start_week
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn week(&self, i: usize) -> NaiveDate {
        self.start_week + Duration::weeks(i as i64)
    }

    pub fn end_week(&self) -> NaiveDate {
        self.week(self.len() - 1)
    }

    /// Sub-series of weeks `from..to`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(Error::IndexOutOfRange { index: to });
        }
        Ok(WeeklySeries {
            name: self.name.clone(),
            start_week: self.week(from),
            values: self.values[from..to].to_vec(),
            transform: self.transform,
        })
    }

    /// Same calendar, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(WeeklySeries::new(self.name.clone(), self.start_week, values)?.with_transform(self.transform))
    }

    /// Index of the week starting at `monday`, if it lies in the span.
    pub fn index_of(&self, monday: NaiveDate) -> Option<usize> {
        let days = (monday - self.start_week).num_days();
        if days < 0 || days % 7 != 0 {
            return None;
        }
        let i = (days / 7) as usize;
        (i < self.len()).then_some(i)
    }
}

/// Indicator series with values in {-1, 0, 1}, aligned with a [`WeeklySeries`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagSeries {
    name: String,
    start_week: NaiveDate,
    values: Vec<i8>,
}

impl FlagSeries {
    pub fn new(name: impl Into<String>, start_week: NaiveDate, values: Vec<i8>) -> Result<Self> {
        if start_week.weekday() != Weekday::Mon {
            return Err(Error::BadParameter(format!("flag start {start_week} is not a Monday")));
        }
        if let Some((index, &v)) = values.iter().enumerate().find(|(_, v)| !(-1..=1).contains(*v)) {
            return Err(Error::BadFlagValue { index, value: v as i64 });
        }
        Ok(FlagSeries { name: name.into(), start_week, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start_week(&self) -> NaiveDate {
        self.start_week
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(Error::IndexOutOfRange { index: to });
        }
        FlagSeries::new(
            self.name.clone(),
            self.start_week + Duration::weeks(from as i64),
            self.values[from..to].to_vec(),
        )
    }

    /// Checks that this flag annotates exactly the weeks of `s`.
    pub fn check_aligned(&self, s: &WeeklySeries) -> Result<()> {
        if self.start_week != s.start_week() || self.len() != s.len() {
            return Err(Error::Misaligned(format!(
                "flag `{}` ({} weeks from {}) vs series `{}` ({} weeks from {})",
                self.name,
                self.len(),
                self.start_week,
                s.name(),
                s.len(),
                s.start_week()
            )));
        }
        Ok(())
    }
}

/// COVID scenario: which ISO weeks get +1 / -1 and how far to forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub covid_positive_weeks: Vec<IsoWeekId>,
    pub covid_negative_weeks: Vec<IsoWeekId>,
    pub horizon_weeks: usize,
}

pub const DEFAULT_HORIZON_WEEKS: usize = 78;

impl Default for ScenarioConfig {
    /// 2020-W12..W26 positive, 2021-W12..W26 negative, 78-week horizon.
    fn default() -> Self {
        let span = |y| {
            IsoWeekId::range_inclusive(IsoWeekId { year: y, week: 12 }, IsoWeekId { year: y, week: 26 })
        };
        ScenarioConfig {
            covid_positive_weeks: span(2020),
            covid_negative_weeks: span(2021),
            horizon_weeks: DEFAULT_HORIZON_WEEKS,
        }
    }
}

impl ScenarioConfig {
    pub fn empty() -> Self {
        ScenarioConfig {
            covid_positive_weeks: Vec::new(),
            covid_negative_weeks: Vec::new(),
            horizon_weeks: DEFAULT_HORIZON_WEEKS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_weeks == 0 {
            return Err(Error::BadParameter("horizon_weeks must be at least 1".into()));
        }
        if let Some(w) = self.covid_positive_weeks.iter().find(|w| self.covid_negative_weeks.contains(w)) {
            return Err(Error::OverlappingWeekSets { week: w.to_string() });
        }
        Ok(())
    }
}

/// Natural log of every value; the result is tagged as log-space.
pub fn log_transform(s: &WeeklySeries) -> Result<WeeklySeries> {
    if let Some((index, &value)) = s.values().iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(Error::NonPositiveValue { index, value });
    }
    let values = s.values().iter().map(|v| v.ln()).collect();
    Ok(s.with_values(values)?.with_transform(Transform::Log))
}

/// Inverse of [`log_transform`]; identity for untransformed series.
pub fn inverse_transform(s: &WeeklySeries) -> Result<WeeklySeries> {
    match s.transform() {
        Transform::Identity => Ok(s.clone()),
        Transform::Log => {
            let values = s.values().iter().map(|v| v.exp()).collect();
            Ok(s.with_values(values)?.with_transform(Transform::Identity))
        }
    }
}

/// `out[i] = in[i + lag] - in[i]`; the result starts `lag` weeks later.
pub fn seasonal_difference(s: &WeeklySeries, lag: usize) -> Result<WeeklySeries> {
    if lag == 0 {
        return Err(Error::BadParameter("difference lag must be positive".into()));
    }
    if s.len() <= lag {
        return Err(Error::SeriesTooShort { needed: lag + 1, got: s.len() });
    }
    let values = difference(s.values(), lag);
    Ok(WeeklySeries::new(s.name(), s.week(lag), values)?.with_transform(s.transform()))
}

pub(crate) fn difference(x: &[f64], lag: usize) -> Vec<f64> {
    x.windows(lag + 1).map(|w| w[lag] - w[0]).collect()
}

/// Rebuilds a series from its first `lag` values and its lag differences.
pub fn undifference(initial: &[f64], diffs: &[f64]) -> Vec<f64> {
    let lag = initial.len();
    let mut out = Vec::with_capacity(lag + diffs.len());
    out.extend_from_slice(initial);
    for (i, d) in diffs.iter().enumerate() {
        let v = out[i] + d;
        out.push(v);
    }
    out
}

/// 1 in the weeks containing Black Friday and Cyber Monday, 0 elsewhere.
pub fn build_peak_flag(start_week: NaiveDate, n_weeks: usize) -> Result<FlagSeries> {
    if n_weeks == 0 {
        return Err(Error::BadParameter("n_weeks must be at least 1".into()));
    }
    let values = (0..n_weeks)
        .map(|i| calendar::is_peak_week(start_week + Duration::weeks(i as i64)) as i8)
        .collect();
    FlagSeries::new("peak", start_week, values)
}

pub fn build_covid_flag(start_week: NaiveDate, n_weeks: usize, cfg: &ScenarioConfig) -> Result<FlagSeries> {
    if n_weeks == 0 {
        return Err(Error::BadParameter("n_weeks must be at least 1".into()));
    }
    cfg.validate()?;
    let values = (0..n_weeks)
        .map(|i| {
            let week = IsoWeekId::of_date(start_week + Duration::weeks(i as i64));
            if cfg.covid_positive_weeks.contains(&week) {
                1
            } else if cfg.covid_negative_weeks.contains(&week) {
                -1
            } else {
                0
            }
        })
        .collect();
    FlagSeries::new("covid", start_week, values)
}
