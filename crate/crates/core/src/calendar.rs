//! ISO week identifiers and the US retail event calendar.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// An ISO-8601 week such as `2020-W12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoWeekId {
    pub year: i32,
    pub week: u32,
}

impl IsoWeekId {
    pub fn new(year: i32, week: u32) -> Result<Self, Error> {
        if week == 0 || week > weeks_in_iso_year(year) {
            return Err(Error::BadParameter(format!("{year}-W{week:02} does not exist")));
        }
        Ok(IsoWeekId { year, week })
    }

    pub fn of_date(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        IsoWeekId { year: iso.year(), week: iso.week() }
    }

    pub fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
            .expect("validated ISO week")
    }

    pub fn succ(self) -> Self {
        IsoWeekId::of_date(self.monday() + Duration::days(7))
    }

    /// Inclusive range of weeks, crossing year boundaries as needed.
    pub fn range_inclusive(from: IsoWeekId, to: IsoWeekId) -> Vec<IsoWeekId> {
        let mut out = Vec::new();
        let mut cur = from;
        while cur <= to {
            out.push(cur);
            cur = cur.succ();
        }
        out
    }
}

impl fmt::Display for IsoWeekId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

impl FromStr for IsoWeekId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::BadParameter(format!("`{s}` is not an ISO week (expected YYYY-Www)"));
        let (y, w) = s.trim().split_once("-W").ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        IsoWeekId::new(year, week)
    }
}

impl Serialize for IsoWeekId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IsoWeekId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn weeks_in_iso_year(year: i32) -> u32 {
    // Dec 28 always falls in the last ISO week of its year.
    NaiveDate::from_ymd_opt(year, 12, 28)
        .map(|d| d.iso_week().week())
        .unwrap_or(52)
}

/// Fourth Thursday of November.
pub fn thanksgiving(year: i32) -> NaiveDate {
    let nov1 = NaiveDate::from_ymd_opt(year, 11, 1).expect("valid date");
    let offset = (Weekday::Thu.num_days_from_monday() + 7 - nov1.weekday().num_days_from_monday()) % 7;
    nov1 + Duration::days(offset as i64 + 21)
}

pub fn black_friday(year: i32) -> NaiveDate {
    thanksgiving(year) + Duration::days(1)
}

pub fn cyber_monday(year: i32) -> NaiveDate {
    thanksgiving(year) + Duration::days(4)
}

/// Monday of the week containing `date`.
pub fn week_start(date: NaiveDate) -> NaiveDate {
    date - Duration::days(date.weekday().num_days_from_monday() as i64)
}

/// True when the week starting on `monday` contains Black Friday or Cyber Monday.
pub fn is_peak_week(monday: NaiveDate) -> bool {
    let year = monday.year();
    week_start(black_friday(year)) == monday || week_start(cyber_monday(year)) == monday
}
