//! Synthetic weekly retail metrics:
//! trend · annual season · Black Friday / Cyber Monday multiplier · COVID shock · lognormal noise.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calendar::{self, IsoWeekId};
use crate::error::{Error, Result};
use crate::series::WeeklySeries;
use crate::varx::MultiSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMetric {
    pub name: String,
    pub base_level: f64,
    /// Compound growth per year.
    pub trend_per_year: f64,
    /// Relative amplitude of the annual cycle, peaking in late December.
    pub seasonal_amplitude: f64,
}

impl Default for SyntheticMetric {
    fn default() -> Self {
        SyntheticMetric { name: "tpv".into(), base_level: 1.0e6, trend_per_year: 0.06, seasonal_amplitude: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovidShock {
    pub onset: IsoWeekId,
    /// Relative level shift held for `duration_weeks`.
    pub level_shift: f64,
    pub duration_weeks: usize,
    /// Relative spike at onset, decaying with time constant `decay_weeks`.
    pub spike: f64,
    pub decay_weeks: f64,
}

impl Default for CovidShock {
    fn default() -> Self {
        CovidShock { onset: IsoWeekId { year: 2020, week: 12 }, level_shift: 0.2, duration_weeks: 40, spike: 0.5, decay_weeks: 4.0 }
    }
}

impl CovidShock {
    fn factor(&self, week: NaiveDate) -> f64 {
        let t = (week - self.onset.monday()).num_weeks();
        if t < 0 {
            return 1.0;
        }
        let shift = if (t as usize) < self.duration_weeks { self.level_shift } else { 0.0 };
        1.0 + shift + self.spike * (-(t as f64) / self.decay_weeks).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    /// First ISO year; the series starts on its week 1 Monday.
    pub start_year: i32,
    pub metrics: Vec<SyntheticMetric>,
    pub black_friday_multiplier: f64,
    pub cyber_monday_multiplier: f64,
    /// Standard deviation of the log-noise.
    pub noise_sd: f64,
    pub covid: Option<CovidShock>,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        let metric = |name: &str, base_level, trend_per_year, seasonal_amplitude| SyntheticMetric {
            name: name.into(),
            base_level,
            trend_per_year,
            seasonal_amplitude,
        };
        SyntheticParams {
            start_year: 2015,
            metrics: vec![
                metric("tpv", 1.0e6, 0.06, 0.15),
                metric("new_buyers", 5000.0, 0.04, 0.12),
                metric("reengaged_buyers", 3000.0, 0.03, 0.10),
            ],
            black_friday_multiplier: 1.8,
            cyber_monday_multiplier: 1.4,
            noise_sd: 0.05,
            covid: Some(CovidShock::default()),
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadParameter(m));
        if self.metrics.len() < 2 {
            return bad("at least two synthetic metrics are required".into());
        }
        for m in &self.metrics {
            if !(m.base_level > 0.0) || !(m.trend_per_year > -1.0) || !(0.0..1.0).contains(&m.seasonal_amplitude) {
                return bad(format!("metric `{}`: need base_level > 0, trend > -1, amplitude in [0, 1)", m.name));
            }
        }
        if !(self.black_friday_multiplier > 0.0 && self.cyber_monday_multiplier > 0.0) {
            return bad("event multipliers must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd {} must be non-negative", self.noise_sd));
        }
        if let Some(c) = &self.covid {
            if !(c.decay_weeks > 0.0) || 1.0 + c.level_shift <= 0.0 || 1.0 + c.spike <= 0.0 {
                return bad("covid shock must keep values positive and decay_weeks > 0".into());
            }
        }
        Ok(())
    }
}

/// Seasonal profile as a function of the week's position in its ISO year.
fn season(week: NaiveDate, amplitude: f64) -> f64 {
    let id = IsoWeekId::of_date(week);
    let phase = (f64::from(id.week) - 51.0) / f64::from(calendar::weeks_in_iso_year(id.year));
    1.0 + amplitude * (2.0 * PI * phase).cos()
}

/// `years` full ISO years of weekly data, deterministic given `seed`.
pub fn generate_synthetic(years: usize, seed: u64, params: &SyntheticParams) -> Result<MultiSeries> {
    if years < 2 {
        return Err(Error::BadParameter(format!("need at least 2 years, got {years}")));
    }
    params.validate()?;
    let start = IsoWeekId::new(params.start_year, 1)?.monday();
    let n: usize = (0..years as i32).map(|y| calendar::weeks_in_iso_year(params.start_year + y) as usize).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = params
        .metrics
        .iter()
        .map(|m| {
            let values = (0..n)
                .map(|i| {
                    let week = start + Duration::weeks(i as i64);
                    let trend = (1.0 + m.trend_per_year).powf(i as f64 / 52.0);
                    let event = if calendar::week_start(calendar::black_friday(week_year(week))) == week {
                        params.black_friday_multiplier
                    } else if calendar::week_start(calendar::cyber_monday(week_year(week))) == week {
                        params.cyber_monday_multiplier
                    } else {
                        1.0
                    };
                    let shock = params.covid.as_ref().map_or(1.0, |c| c.factor(week));
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m.base_level * trend * season(week, m.seasonal_amplitude) * event * shock * (params.noise_sd * z).exp()
                })
                .collect();
            WeeklySeries::new(m.name.clone(), start, values)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSeries::new(series)
}

fn week_year(monday: NaiveDate) -> i32 {
    chrono::Datelike::year(&monday)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{mape, EvaluationPair};

    fn no_covid() -> SyntheticParams {
        SyntheticParams { covid: None, ..SyntheticParams::default() }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = SyntheticParams::default();
        let a = generate_synthetic(3, 7, &p).unwrap();
        let b = generate_synthetic(3, 7, &p).unwrap();
        let c = generate_synthetic(3, 8, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.series()[0].values(), c.series()[0].values());
    }

    #[test]
    fn spans_whole_iso_years() {
        let ms = generate_synthetic(6, 1, &SyntheticParams::default()).unwrap();
        // 2015 and 2020 have 53 ISO weeks
        assert_eq!(ms.len(), 52 * 6 + 2);
        assert_eq!(ms.start_week(), NaiveDate::from_ymd_opt(2014, 12, 29).unwrap());
        assert_eq!(IsoWeekId::of_date(ms.end_week()), IsoWeekId { year: 2020, week: 53 });
        assert!(ms.series().iter().all(|s| s.values().iter().all(|v| *v > 0.0)));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate_synthetic(1, 0, &SyntheticParams::default()).is_err());
        let p = SyntheticParams { noise_sd: -1.0, ..SyntheticParams::default() };
        assert!(matches!(generate_synthetic(3, 0, &p), Err(Error::BadParameter(_))));
    }

    #[test]
    fn black_friday_week_is_annual_max() {
        let p = SyntheticParams { black_friday_multiplier: 2.0, ..no_covid() };
        let mut hits = 0;
        let mut total = 0;
        for seed in 0..100 {
            let ms = generate_synthetic(2, seed, &p).unwrap();
            let s = &ms.series()[0];
            for year in [2015, 2016] {
                let idx: Vec<usize> = (0..s.len()).filter(|&i| IsoWeekId::of_date(s.week(i)).year == year).collect();
                let arg = idx.iter().copied().max_by(|&a, &b| s.values()[a].total_cmp(&s.values()[b])).unwrap();
                let bf = calendar::week_start(calendar::black_friday(year));
                hits += usize::from(s.week(arg) == bf);
                total += 1;
            }
        }
        assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
    }

    fn seasonal_naive_mape_2020(p: &SyntheticParams) -> f64 {
        let ms = generate_synthetic(6, 3, p).unwrap();
        let s = &ms.series()[0];
        let from = s.index_of(IsoWeekId { year: 2020, week: 1 }.monday()).unwrap();
        let actual = s.values()[from..from + 52].to_vec();
        let naive = s.values()[from - 52..from].to_vec();
        mape(&EvaluationPair::new(actual, naive).unwrap()).unwrap()
    }

    #[test]
    fn covid_shock_breaks_seasonal_pattern() {
        let p = no_covid();
        // year-over-year ratio is trend · exp(noise difference), plus the
        // few weeks where Black Friday moves between ISO weeks
        let sd = p.noise_sd * 2f64.sqrt();
        let bound = 100.0 * (p.metrics[0].trend_per_year + 2.0 * sd + 2.0 * (p.black_friday_multiplier - 1.0) / 52.0);
        let calm = seasonal_naive_mape_2020(&p);
        assert!(calm < bound, "{calm} vs {bound}");
        let shocked = seasonal_naive_mape_2020(&SyntheticParams::default());
        assert!(shocked > 1.5 * calm, "{shocked} vs {calm}");
    }
}
