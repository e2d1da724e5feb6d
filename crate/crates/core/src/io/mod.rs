//! CSV ingest and export, synthetic data, summary tables and the end-to-end pipeline.
//!
//! Input files have a header row, a `week_start` column of consecutive
//! Mondays (`YYYY-MM-DD`), one column per metric and optional flag columns of
//! integers in {-1, 0, 1}. Flag columns are named `flag_<name>` or listed
//! explicitly in [`IngestOptions::flag_columns`].

pub mod pipeline;
pub mod summary;
pub mod synth;

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{FlagSeries, WeeklySeries};
use crate::varx::MultiSeries;

pub const WEEK_COLUMN: &str = "week_start";
pub const FLAG_PREFIX: &str = "flag_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Metric columns to keep, in this order. All non-flag columns when empty.
    pub metric_columns: Vec<String>,
    /// Extra flag columns besides those with the `flag_` prefix.
    pub flag_columns: Vec<String>,
    /// Fill missing weeks by linear interpolation (flags get 0) instead of failing.
    pub fill_gaps: bool,
}

/// Validated metric series and flags sharing one weekly span.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metrics: Vec<WeeklySeries>,
    pub flags: Vec<FlagSeries>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.metrics.first().map_or(0, WeeklySeries::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start_week(&self) -> Option<NaiveDate> {
        self.metrics.first().map(WeeklySeries::start_week)
    }

    pub fn metric(&self, name: &str) -> Result<&WeeklySeries> {
        self.metrics
            .iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("no metric column `{name}`")))
    }

    pub fn flag(&self, name: &str) -> Option<&FlagSeries> {
        self.flags.iter().find(|f| f.name() == name)
    }

    pub fn to_multi(&self) -> Result<MultiSeries> {
        MultiSeries::new(self.metrics.clone())
    }

    /// Same layout as accepted by [`ingest`]; flags are written as `flag_<name>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(WEEK_COLUMN);
        for s in &self.metrics {
            out.push(',');
            out.push_str(s.name());
        }
        for f in &self.flags {
            out.push_str(&format!(",{FLAG_PREFIX}{}", f.name()));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.metrics[0].week(i).to_string());
            for s in &self.metrics {
                out.push_str(&format!(",{}", s.values()[i]));
            }
            for f in &self.flags {
                out.push_str(&format!(",{}", f.values()[i]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_str(&text, &path.display().to_string(), opts)
}

/// Parses CSV text; `label` names the source in error messages.
pub fn ingest_str(text: &str, label: &str, opts: &IngestOptions) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse { path: label.to_string(), line, message };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let week_col = cols
        .iter()
        .position(|c| *c == WEEK_COLUMN)
        .ok_or_else(|| parse_err(1, format!("missing `{WEEK_COLUMN}` column")))?;

    let is_flag = |c: &str| c.starts_with(FLAG_PREFIX) || opts.flag_columns.iter().any(|f| f == c);
    for f in &opts.flag_columns {
        if !cols.contains(&f.as_str()) {
            return Err(parse_err(1, format!("flag column `{f}` not found")));
        }
    }
    let metric_idx: Vec<usize> = if opts.metric_columns.is_empty() {
        (0..cols.len()).filter(|&i| i != week_col && !is_flag(cols[i])).collect()
    } else {
        opts.metric_columns
            .iter()
            .map(|m| {
                cols.iter()
                    .position(|c| c == m)
                    .ok_or_else(|| parse_err(1, format!("metric column `{m}` not found")))
            })
            .collect::<Result<_>>()?
    };
    if metric_idx.is_empty() {
        return Err(parse_err(1, "no metric columns".into()));
    }
    let flag_idx: Vec<usize> = (0..cols.len()).filter(|&i| i != week_col && is_flag(cols[i])).collect();

    let mut weeks: Vec<NaiveDate> = Vec::new();
    let mut metric_vals: Vec<Vec<f64>> = vec![Vec::new(); metric_idx.len()];
    let mut flag_vals: Vec<Vec<i8>> = vec![Vec::new(); flag_idx.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let raw_date = &rec[week_col];
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| parse_err(line, format!("bad date {raw_date:?}")))?;
        if date.weekday() != Weekday::Mon {
            return Err(Error::NonMondayDate { path: label.to_string(), line, date: raw_date.to_string() });
        }
        if let Some(&prev) = weeks.last() {
            let expected = prev + Duration::weeks(1);
            if date < expected {
                return Err(parse_err(line, format!("week {date} is out of order or repeated")));
            }
            if date > expected {
                if !opts.fill_gaps {
                    return Err(Error::Gap { path: label.to_string(), line, week: expected.to_string() });
                }
                let missing = ((date - prev).num_weeks() - 1) as usize;
                let next: Vec<f64> = metric_idx
                    .iter()
                    .map(|&c| parse_value(&rec[c], cols[c], line, &parse_err))
                    .collect::<Result<_>>()?;
                for step in 1..=missing {
                    weeks.push(prev + Duration::weeks(step as i64));
                    let frac = step as f64 / (missing + 1) as f64;
                    for (vals, &b) in metric_vals.iter_mut().zip(&next) {
                        let a = *vals.last().expect("previous row");
                        vals.push(a + frac * (b - a));
                    }
                    for vals in flag_vals.iter_mut() {
                        vals.push(0);
                    }
                }
            }
        }
        weeks.push(date);
        for (vals, &c) in metric_vals.iter_mut().zip(&metric_idx) {
            vals.push(parse_value(&rec[c], cols[c], line, &parse_err)?);
        }
        for (vals, &c) in flag_vals.iter_mut().zip(&flag_idx) {
            let raw = &rec[c];
            let v = raw
                .parse::<i8>()
                .ok()
                .filter(|v| (-1..=1).contains(v))
                .ok_or_else(|| parse_err(line, format!("flag `{}` value {raw:?} is not -1, 0 or 1", cols[c])))?;
            vals.push(v);
        }
    }
    let start = *weeks.first().ok_or_else(|| parse_err(2, "no data rows".into()))?;
    let metrics = metric_idx
        .iter()
        .zip(metric_vals)
        .map(|(&c, v)| WeeklySeries::new(cols[c], start, v))
        .collect::<Result<_>>()?;
    let flags = flag_idx
        .iter()
        .zip(flag_vals)
        .map(|(&c, v)| FlagSeries::new(cols[c].strip_prefix(FLAG_PREFIX).unwrap_or(cols[c]), start, v))
        .collect::<Result<_>>()?;
    Ok(Dataset { metrics, flags })
}

fn parse_value(raw: &str, col: &str, line: usize, err: &dyn Fn(usize, String) -> Error) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(line, format!("column `{col}` value {raw:?} is not a finite number")))
}

/// Writes `contents` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    std::io::Write::write_all(&mut tmp, contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
