use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// ISO-8601 week (weeks start on Monday). Labelled `YYYY-Www`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Week {
    year: i32,
    week: u32,
}

impl Week {
    pub fn new(year: i32, week: u32) -> Option<Self> {
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).map(|_| Week { year, week })
    }

    /// The week containing `date`.
    pub fn containing(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        Week { year: iso.year(), week: iso.week() }
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn week(self) -> u32 {
        self.week
    }

    pub fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon).expect("validated week")
    }

    pub fn sunday(self) -> NaiveDate {
        self.monday() + Duration::days(6)
    }

    pub fn next(self) -> Self {
        Week::containing(self.monday() + Duration::days(7))
    }

    /// Number of weeks from `self` to `later` (negative if `later` is earlier).
    pub fn weeks_until(self, later: Week) -> i64 {
        (later.monday() - self.monday()).num_days() / 7
    }

    /// Number of ISO weeks in `year` (52 or 53).
    pub fn weeks_in_year(year: i32) -> u32 {
        if NaiveDate::from_isoywd_opt(year, 53, Weekday::Mon).is_some() {
            53
        } else {
            52
        }
    }
}

impl fmt::Display for Week {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid week label `{0}` (expected YYYY-Www)")]
pub struct WeekParseError(String);

impl FromStr for Week {
    type Err = WeekParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || WeekParseError(s.to_string());
        let (y, w) = s.split_once("-W").ok_or_else(err)?;
        let year: i32 = y.parse().map_err(|_| err())?;
        let week: u32 = w.parse().map_err(|_| err())?;
        Week::new(year, week).ok_or_else(err)
    }
}

impl Serialize for Week {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Week {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive, contiguous span of weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Period {
    pub start: Week,
    pub end: Week,
}

impl Period {
    pub fn new(start: Week, end: Week) -> Option<Self> {
        (start <= end).then_some(Period { start, end })
    }

    /// Every week of the given ISO years, e.g. `2019..=2020` is 2019-W01..2020-W53.
    pub fn iso_years(first: i32, last: i32) -> Self {
        Period {
            start: Week::new(first, 1).expect("week 1 exists"),
            end: Week::new(last, Week::weeks_in_year(last)).expect("last week exists"),
        }
    }

    /// The study span: ISO years 2019 and 2020 (105 weeks).
    pub fn study() -> Self {
        Self::iso_years(2019, 2020)
    }

    pub fn len(&self) -> usize {
        self.start.weeks_until(self.end) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weeks(&self) -> Vec<Week> {
        let mut out = Vec::with_capacity(self.len());
        let mut w = self.start;
        loop {
            out.push(w);
            if w == self.end {
                break;
            }
            w = w.next();
        }
        out
    }

    pub fn index_of(&self, week: Week) -> Option<usize> {
        (week >= self.start && week <= self.end).then(|| self.start.weeks_until(week) as usize)
    }

    pub fn contains(&self, week: Week) -> bool {
        self.index_of(week).is_some()
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}
