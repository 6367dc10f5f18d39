//! Leap-year aware sample indexing across yearly files.
//!
//! Samples are numbered globally across a contiguous range of years, one per
//! day. [`locate`] maps a global index back to its year and day-of-year and
//! rejects only the last `dt` samples of the final year, which have no
//! forecast target. Pairs whose target crosses into the next year remain
//! valid because the yearly files are contiguous.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate, Weekday};
use log::debug;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalendarError {
    #[error("global index {global_idx} outside range of {total} samples")]
    IndexOutOfRange { global_idx: usize, total: usize },
    #[error("Skipping last sample from the last year: global_idx={global_idx}, local_idx={local_idx}")]
    SkipLastSample { global_idx: usize, local_idx: usize },
    #[error("invalid year range {first}..={last}")]
    InvalidRange { first: i32, last: i32 },
    #[error("forecast step must be at least one day")]
    ZeroStep,
    #[error("year {0} outside supported calendar")]
    BadYear(i32),
}

pub fn is_leap_year(year: i32) -> bool {
    year % 4 == 0 && (year % 100 != 0 || year % 400 == 0)
}

pub fn days_in_year(year: i32) -> usize {
    if is_leap_year(year) {
        366
    } else {
        365
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YearRange {
    first_year: i32,
    last_year: i32,
}

impl YearRange {
    pub fn new(first_year: i32, last_year: i32) -> Result<Self, CalendarError> {
        if first_year > last_year {
            return Err(CalendarError::InvalidRange {
                first: first_year,
                last: last_year,
            });
        }
        Ok(Self {
            first_year,
            last_year,
        })
    }

    pub fn first_year(&self) -> i32 {
        self.first_year
    }

    pub fn last_year(&self) -> i32 {
        self.last_year
    }

    pub fn n_years(&self) -> usize {
        (self.last_year - self.first_year + 1) as usize
    }

    pub fn year_from_idx(&self, year_idx: usize) -> i32 {
        self.first_year + year_idx as i32
    }

    /// Sample count of one yearly file.
    pub fn max_samples(&self, year_idx: usize) -> usize {
        let year = self.year_from_idx(year_idx);
        if is_leap_year(year) {
            debug!("Year {year} is detected as a leap year.");
        }
        days_in_year(year)
    }

    pub fn total_days(&self) -> usize {
        (self.first_year..=self.last_year).map(days_in_year).sum()
    }

    /// Global index of day-of-year `local_idx` in year `year_idx`.
    pub fn linearize(&self, year_idx: usize, local_idx: usize) -> usize {
        (0..year_idx)
            .map(|i| days_in_year(self.year_from_idx(i)))
            .sum::<usize>()
            + local_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleLocator {
    pub global_idx: usize,
    pub year_idx: usize,
    pub local_idx: usize,
    pub dt: usize,
}

/// Maps a global sample index to its yearly file and day-of-year.
pub fn locate(global_idx: usize, range: YearRange, dt: usize) -> Result<SampleLocator, CalendarError> {
    if dt == 0 {
        return Err(CalendarError::ZeroStep);
    }
    let n_years = range.n_years();
    let mut remaining = global_idx;
    for year_idx in 0..n_years {
        let max_samples = range.max_samples(year_idx);
        if remaining < max_samples {
            let local_idx = remaining;
            if local_idx >= max_samples.saturating_sub(dt) && year_idx == n_years - 1 {
                debug!(
                    "Skipping last sample from the last year: global_idx={global_idx}, local_idx={local_idx}"
                );
                return Err(CalendarError::SkipLastSample {
                    global_idx,
                    local_idx,
                });
            }
            return Ok(SampleLocator {
                global_idx,
                year_idx,
                local_idx,
                dt,
            });
        }
        remaining -= max_samples;
    }
    Err(CalendarError::IndexOutOfRange {
        global_idx,
        total: range.total_days(),
    })
}

/// Number of global indices that have a forecast target `dt` days later.
pub fn valid_pair_count(range: YearRange, dt: usize) -> usize {
    range.total_days().saturating_sub(dt)
}

/// Day-of-year indices (0-based) of every date in `year` falling on one of
/// `weekdays`.
pub fn init_schedule(year: i32, weekdays: &BTreeSet<WeekdaySet>) -> Result<Vec<usize>, CalendarError> {
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).ok_or(CalendarError::BadYear(year))?;
    Ok((0..days_in_year(year))
        .filter(|&d| {
            let date = jan1 + chrono::Days::new(d as u64);
            weekdays.contains(&WeekdaySet::from(date.weekday()))
        })
        .collect())
}

/// Orderable wrapper around [`chrono::Weekday`], Monday first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeekdaySet(u8);

impl From<Weekday> for WeekdaySet {
    fn from(w: Weekday) -> Self {
        Self(w.num_days_from_monday() as u8)
    }
}

impl WeekdaySet {
    pub fn parse_list(text: &str) -> Option<BTreeSet<WeekdaySet>> {
        text.split(',')
            .map(|s| s.trim().parse::<Weekday>().ok().map(Self::from))
            .collect()
    }
}

/// Monday and Thursday, the operational initialization days.
pub fn monday_thursday() -> BTreeSet<WeekdaySet> {
    [Weekday::Mon, Weekday::Thu].into_iter().map(WeekdaySet::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalendarKind {
    #[default]
    Gregorian,
    /// Every year has 365 days.
    NoLeap,
}

impl std::str::FromStr for CalendarKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gregorian" => Ok(Self::Gregorian),
            "noleap" => Ok(Self::NoLeap),
            other => Err(format!("unknown calendar {other:?}")),
        }
    }
}

/// Daily time axis starting on January 1 of `first_year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayAxis {
    pub first_year: i32,
    pub kind: CalendarKind,
}

impl DayAxis {
    pub fn new(first_year: i32, kind: CalendarKind) -> Self {
        Self { first_year, kind }
    }

    /// Axis whose first year holds the instant `hours` after 1970-01-01.
    pub fn from_epoch_hours(hours: i64, kind: CalendarKind) -> Self {
        let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        Self::new((epoch + chrono::Duration::hours(hours)).year(), kind)
    }

    pub fn days_in(&self, year: i32) -> usize {
        match self.kind {
            CalendarKind::Gregorian => days_in_year(year),
            CalendarKind::NoLeap => 365,
        }
    }

    /// Day index of January 1 of `year`.
    pub fn year_start(&self, year: i32) -> usize {
        assert!(year >= self.first_year, "year {year} precedes axis start");
        (self.first_year..year).map(|y| self.days_in(y)).sum()
    }

    pub fn day_of(&self, year: i32, doy: usize) -> usize {
        self.year_start(year) + doy
    }

    /// `(year, day_of_year)` of a day index.
    pub fn date_of(&self, mut day: usize) -> (i32, usize) {
        let mut year = self.first_year;
        loop {
            let n = self.days_in(year);
            if day < n {
                return (year, day);
            }
            day -= n;
            year += 1;
        }
    }

    /// Day indices `[start, end)` covering the years `first..=last`.
    pub fn year_span(&self, first: i32, last: i32) -> std::ops::Range<usize> {
        self.year_start(first)..self.year_start(last + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_leap(y: i32) -> bool {
        // Feb 29 exists.
        NaiveDate::from_ymd_opt(y, 2, 29).is_some()
    }

    #[test]
    fn leap_rule_examples() {
        assert!(is_leap_year(1980));
        assert!(!is_leap_year(1900));
        assert!(is_leap_year(2000));
        assert_eq!(days_in_year(2016), 366);
        assert_eq!(days_in_year(2015), 365);
        for y in 1583..=2400 {
            assert_eq!(is_leap_year(y), brute_leap(y), "{y}");
        }
    }

    #[test]
    fn era_range_day_count() {
        // 37 years, leap years 1980..=2012 every 4 years: 9 of them.
        let leaps = (1979..=2015).filter(|&y| brute_leap(y)).count();
        assert_eq!(leaps, 9);
        let r = YearRange::new(1979, 2015).unwrap();
        assert_eq!(r.total_days(), 37 * 365 + leaps);
        assert_eq!(r.total_days(), 13514);
    }

    #[test]
    fn locate_examples() {
        let r = YearRange::new(1979, 2015).unwrap();
        let first = locate(0, r, 1).unwrap();
        assert_eq!((first.year_idx, first.local_idx), (0, 0));
        assert_eq!(
            locate(13513, r, 1),
            Err(CalendarError::SkipLastSample {
                global_idx: 13513,
                local_idx: 364
            })
        );
        let dec31 = locate(364, r, 1).unwrap();
        assert_eq!((dec31.year_idx, dec31.local_idx), (0, 364));
        // Target of the last 1979 sample is the first sample of 1980.
        assert_eq!(r.linearize(1, 0), 365);
        assert!(matches!(
            locate(13514, r, 1),
            Err(CalendarError::IndexOutOfRange { .. })
        ));
        assert_eq!(locate(0, r, 0), Err(CalendarError::ZeroStep));
    }

    #[test]
    fn pair_counts() {
        assert_eq!(valid_pair_count(YearRange::new(1979, 2015).unwrap(), 1), 13513);
        assert_eq!(valid_pair_count(YearRange::new(2015, 2015).unwrap(), 1), 364);
        assert_eq!(valid_pair_count(YearRange::new(2016, 2016).unwrap(), 2), 364);
    }

    #[test]
    fn schedule_2018() {
        let mt = init_schedule(2018, &monday_thursday()).unwrap();
        assert_eq!(mt.len(), 105);
        assert_eq!(mt[0], 0);
        assert!(mt.windows(2).all(|w| w[0] < w[1]));
        let mon = init_schedule(2018, &WeekdaySet::parse_list("mon").unwrap()).unwrap();
        assert_eq!(mon.len(), 53);
    }

    #[test]
    fn day_axis_roundtrip() {
        let ax = DayAxis::new(2015, CalendarKind::Gregorian);
        assert_eq!(ax.year_start(2017), 365 + 366);
        assert_eq!(ax.date_of(365 + 365), (2016, 365));
        let nl = DayAxis::new(2015, CalendarKind::NoLeap);
        assert_eq!(nl.date_of(365 + 365), (2017, 0));
        assert_eq!(nl.year_span(2016, 2017), 365..1095);
        assert_eq!(DayAxis::from_epoch_hours(0, CalendarKind::NoLeap).first_year, 1970);
        assert_eq!(DayAxis::from_epoch_hours(-1, CalendarKind::NoLeap).first_year, 1969);
        let h2001 = 24 * (31 * 365 + 8) + 18;
        assert_eq!(DayAxis::from_epoch_hours(h2001, CalendarKind::Gregorian).first_year, 2001);
    }
}
