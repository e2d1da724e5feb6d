//! Annual summary table: level sums, year-over-year percentages, averages of
//! share metrics and trailing-twelve-month totals, one column per ISO year.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calendar::{self, IsoWeekId};
use crate::error::{Error, Result};
use crate::series::WeeklySeries;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryOptions {
    /// Metrics reported as annual means in the average block instead of sums.
    pub share_metrics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YearSource {
    History,
    Forecast,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub years: Vec<i32>,
    pub sources: Vec<YearSource>,
    /// Annual sums.
    pub levels: Vec<SummaryRow>,
    /// `(year / prior year - 1) · 100`, from the level block.
    pub yoy: Vec<SummaryRow>,
    /// Annual means of share metrics.
    pub averages: Vec<SummaryRow>,
    /// Trailing 52-week sum at the last week of each year.
    pub ttm: Vec<SummaryRow>,
}

/// `forecasts` are matched to `histories` by name and must start the week after
/// the history ends. Only complete ISO years appear as columns.
pub fn emit_summary(histories: &[WeeklySeries], forecasts: &[WeeklySeries], opts: &SummaryOptions) -> Result<SummaryTable> {
    let first = histories.first().ok_or(Error::IncompleteYear)?;
    let mut joined = Vec::with_capacity(histories.len());
    for h in histories {
        if h.start_week() != first.start_week() || h.len() != first.len() {
            return Err(Error::Misaligned(format!("history `{}` does not share the span of `{}`", h.name(), first.name())));
        }
        let mut values = h.values().to_vec();
        if let Some(f) = forecasts.iter().find(|f| f.name() == h.name()) {
            if f.start_week() != h.end_week() + chrono::Duration::weeks(1) {
                return Err(Error::Misaligned(format!("forecast `{}` does not start after its history", f.name())));
            }
            values.extend_from_slice(f.values());
        }
        joined.push(WeeklySeries::new(h.name(), h.start_week(), values)?);
    }
    let hist_len = first.len();

    // week indices by ISO year, over the longest joined series
    let longest = joined.iter().map(WeeklySeries::len).max().unwrap_or(0);
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for i in 0..longest {
        by_year.entry(IsoWeekId::of_date(first.week(i)).year).or_default().push(i);
    }
    let complete = |y: i32, idx: &[usize], len: usize| {
        idx.len() == calendar::weeks_in_iso_year(y) as usize && idx.last().is_some_and(|&l| l < len)
    };
    if !by_year.iter().any(|(&y, idx)| complete(y, idx, hist_len)) {
        return Err(Error::IncompleteYear);
    }
    let years: Vec<(i32, &Vec<usize>)> = by_year
        .iter()
        .filter(|(&y, idx)| joined.iter().any(|s| complete(y, idx, s.len())))
        .map(|(&y, idx)| (y, idx))
        .collect();
    let sources = years
        .iter()
        .map(|(_, idx)| match (idx[0] < hist_len, *idx.last().unwrap() < hist_len) {
            (true, true) => YearSource::History,
            (false, false) => YearSource::Forecast,
            _ => YearSource::Mixed,
        })
        .collect();

    let mut levels = Vec::new();
    let mut yoy = Vec::new();
    let mut averages = Vec::new();
    let mut ttm = Vec::new();
    for s in &joined {
        let v = s.values();
        let annual: Vec<Option<f64>> = years
            .iter()
            .map(|&(y, idx)| complete(y, idx, s.len()).then(|| idx.iter().map(|&i| v[i]).sum::<f64>()))
            .collect();
        if opts.share_metrics.iter().any(|m| m == s.name()) {
            let means = years
                .iter()
                .zip(&annual)
                .map(|(&(_, idx), sum)| sum.map(|x| x / idx.len() as f64))
                .collect();
            averages.push(SummaryRow { metric: s.name().to_string(), values: means });
            continue;
        }
        let pct = (0..annual.len())
            .map(|j| match (j.checked_sub(1).and_then(|p| annual[p]), annual[j]) {
                (Some(prev), Some(cur)) if prev != 0.0 && years[j].0 == years[j - 1].0 + 1 => Some((cur / prev - 1.0) * 100.0),
                _ => None,
            })
            .collect();
        let trailing = years
            .iter()
            .map(|&(_, idx)| {
                let end = *idx.last().unwrap();
                (end < s.len() && end + 1 >= 52).then(|| v[end + 1 - 52..=end].iter().sum::<f64>())
            })
            .collect();
        levels.push(SummaryRow { metric: s.name().to_string(), values: annual });
        yoy.push(SummaryRow { metric: s.name().to_string(), values: pct });
        ttm.push(SummaryRow { metric: s.name().to_string(), values: trailing });
    }
    Ok(SummaryTable { years: years.iter().map(|y| y.0).collect(), sources, levels, yoy, averages, ttm })
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,metric");
        for y in &self.years {
            out.push_str(&format!(",{y}"));
        }
        out.push_str("\nperiod,");
        for s in &self.sources {
            let label = match s {
                YearSource::History => "history",
                YearSource::Forecast => "forecast",
                YearSource::Mixed => "mixed",
            };
            out.push_str(&format!(",{label}"));
        }
        out.push('\n');
        for (block, rows) in [("level", &self.levels), ("yoy_pct", &self.yoy), ("average", &self.averages), ("ttm", &self.ttm)] {
            for r in rows {
                out.push_str(&format!("{block},{}", r.metric));
                for v in &r.values {
                    out.push(',');
                    if let Some(x) = v {
                        out.push_str(&x.to_string());
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn monday(y: i32, w: u32) -> NaiveDate {
        IsoWeekId { year: y, week: w }.monday()
    }

    #[test]
    fn constant_two_years() {
        let s = WeeklySeries::new("tpv", monday(2018, 1), vec![1.0; 104]).unwrap();
        let t = emit_summary(&[s], &[], &SummaryOptions::default()).unwrap();
        assert_eq!(t.years, [2018, 2019]);
        assert_eq!(t.levels[0].values, [Some(52.0), Some(52.0)]);
        assert_eq!(t.yoy[0].values, [None, Some(0.0)]);
        assert_eq!(t.ttm[0].values, [Some(52.0), Some(52.0)]);
    }

    #[test]
    fn yoy_fifty_percent() {
        let mut v = vec![2.0; 52];
        v.extend(vec![3.0; 52]);
        let s = WeeklySeries::new("tpv", monday(2018, 1), v).unwrap();
        let t = emit_summary(&[s], &[], &SummaryOptions::default()).unwrap();
        assert!((t.yoy[0].values[1].unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn forecast_years_and_partial_years() {
        // history from mid 2017; 2018 complete; forecast covers 2019 and half of 2020
        let start = monday(2017, 30);
        let n_hist = 23 + 52;
        let h = WeeklySeries::new("tpv", start, (0..n_hist).map(|i| 1.0 + i as f64).collect()).unwrap();
        let f = WeeklySeries::new("tpv", h.end_week() + chrono::Duration::weeks(1), vec![5.0; 78]).unwrap();
        let share = WeeklySeries::new("share", start, vec![0.25; n_hist]).unwrap();
        let opts = SummaryOptions { share_metrics: vec!["share".into()] };
        let t = emit_summary(&[h.clone(), share], &[f], &opts).unwrap();
        assert_eq!(t.years, [2018, 2019]);
        assert_eq!(t.sources, [YearSource::History, YearSource::Forecast]);
        assert_eq!(t.averages[0].values, [Some(0.25), None]);
        assert_eq!(t.levels[0].values[1], Some(5.0 * 52.0));
        // ttm at end of 2018 is the last 52 history weeks
        let expect: f64 = h.values()[n_hist - 52..].iter().sum();
        assert_eq!(t.ttm[0].values[0], Some(expect));
    }

    #[test]
    fn incomplete_history_rejected() {
        let s = WeeklySeries::new("tpv", monday(2018, 10), vec![1.0; 52]).unwrap();
        assert!(matches!(emit_summary(&[s], &[], &SummaryOptions::default()), Err(Error::IncompleteYear)));
    }

    #[test]
    fn csv_layout() {
        let s = WeeklySeries::new("tpv", monday(2018, 1), vec![1.0; 104]).unwrap();
        let csv = emit_summary(&[s], &[], &SummaryOptions::default()).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "block,metric,2018,2019");
        assert_eq!(lines[1], "period,,history,history");
        assert_eq!(lines[2], "level,tpv,52,52");
        assert_eq!(lines[3], "yoy_pct,tpv,,0");
        assert_eq!(lines[4], "ttm,tpv,52,52");
    }
}
