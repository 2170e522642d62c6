//! Daily series ingestion, validation and windowing.

use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One day of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub deaths: u32,
    /// Daily mean temperature, °C.
    pub tmean: f64,
    pub pm10: Option<f64>,
    pub o3: Option<f64>,
    pub holiday: bool,
}

/// Date-ordered daily records.
///
/// Consecutive records within the same calendar year must be exactly one day
/// apart. A jump across a year boundary (e.g. the end of one summer to the
/// start of the next) starts a new contiguous block.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    records: Vec<DailyRecord>,
    provenance: String,
}

impl DailySeries {
    pub fn new(records: Vec<DailyRecord>, provenance: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptySeries);
        }
        for (i, r) in records.iter().enumerate() {
            if !r.tmean.is_finite() {
                return Err(Error::Parse {
                    row: i + 1,
                    column: "tmean".into(),
                    message: format!("non-finite temperature on {}", r.date),
                });
            }
        }
        for pair in records.windows(2) {
            let (a, b) = (pair[0].date, pair[1].date);
            if b <= a {
                return Err(Error::DateOrder(b));
            }
            if a.year() == b.year() && (b - a).num_days() != 1 {
                return Err(Error::DateGap {
                    before: a,
                    after: b,
                    missing: a.succ_opt().expect("date overflow"),
                });
            }
        }
        Ok(Self {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn records(&self) -> &[DailyRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn temps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.tmean).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn deaths(&self) -> Vec<f64> {
        self.records.iter().map(|r| f64::from(r.deaths)).collect()
    }

    /// Maximal runs of calendar-adjacent days.
    pub fn blocks(&self) -> Blocks {
        let mut ranges = Vec::new();
        let mut start = 0;
        for i in 1..self.records.len() {
            if (self.records[i].date - self.records[i - 1].date).num_days() != 1 {
                ranges.push(start..i);
                start = i;
            }
        }
        ranges.push(start..self.records.len());
        Blocks::from_ranges(ranges)
    }
}

/// Partition of day indices into contiguous runs. Lags and heatwave runs
/// never cross a block boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks {
    ranges: Vec<Range<usize>>,
    start_of: Vec<usize>,
}

impl Blocks {
    /// A single block covering `n` days.
    pub fn contiguous(n: usize) -> Self {
        Self::from_ranges(std::iter::once(0..n).collect())
    }

    /// Ranges must be consecutive and cover `0..n`.
    pub fn from_ranges(ranges: Vec<Range<usize>>) -> Self {
        let n = ranges.last().map_or(0, |r| r.end);
        let mut start_of = vec![0; n];
        let mut expected = 0;
        for r in &ranges {
            assert_eq!(r.start, expected, "block ranges must be consecutive");
            expected = r.end;
            for s in &mut start_of[r.clone()] {
                *s = r.start;
            }
        }
        Self { ranges, start_of }
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    /// Number of days covered.
    pub fn len(&self) -> usize {
        self.start_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_of.is_empty()
    }

    /// Index of the day `lag` days before `t`, if it lies in the same block.
    #[inline]
    pub fn lag(&self, t: usize, lag: usize) -> Option<usize> {
        (t >= lag && t - lag >= self.start_of[t]).then(|| t - lag)
    }

    /// Index of the day `lead` days after `t`, if it lies in the same block.
    #[inline]
    pub fn lead(&self, t: usize, lead: usize) -> Option<usize> {
        let u = t + lead;
        (u < self.start_of.len() && self.start_of[u] == self.start_of[t]).then_some(u)
    }
}

/// Season bounds anchored on month and day, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl SeasonWindow {
    pub fn new(start: (u32, u32), end: (u32, u32)) -> Result<Self> {
        let w = Self { start, end };
        for (m, d) in [start, end] {
            // 2000 is a leap year so Feb 29 is accepted as an anchor.
            if NaiveDate::from_ymd_opt(2000, m, d).is_none() {
                return Err(Error::InvalidConfig(format!("invalid month-day {m}-{d}")));
            }
        }
        if start > end {
            return Err(Error::InvalidConfig(format!(
                "season start {start:?} is after end {end:?}"
            )));
        }
        Ok(w)
    }

    /// June 1 through August 31.
    pub fn summer() -> Self {
        Self {
            start: (6, 1),
            end: (8, 31),
        }
    }

    pub fn full_year() -> Self {
        Self {
            start: (1, 1),
            end: (12, 31),
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        let md = (date.month(), date.day());
        self.start <= md && md <= self.end
    }

    /// First day of the window in `year`. A Feb 29 anchor falls back to
    /// Mar 1 in common years.
    pub fn start_in(&self, year: i32) -> NaiveDate {
        NaiveDate::from_ymd_opt(year, self.start.0, self.start.1)
            .or_else(|| NaiveDate::from_ymd_opt(year, 3, 1))
            .expect("valid anchor")
    }
}

impl Default for SeasonWindow {
    fn default() -> Self {
        Self::summer()
    }
}

/// Header names for each field of [`DailyRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub deaths: String,
    pub tmean: String,
    pub pm10: Option<String>,
    pub o3: Option<String>,
    pub holiday: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "date".into(),
            deaths: "deaths".into(),
            tmean: "tmean".into(),
            pm10: None,
            o3: None,
            holiday: None,
        }
    }
}

/// Load a comma-delimited file with a header row.
pub fn load_series(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<DailySeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_series(file, columns, path.display().to_string())
}

/// Parse delimited text from any reader. Empty cells are missing values.
pub fn read_series<R: Read>(
    reader: R,
    columns: &ColumnMap,
    provenance: impl Into<String>,
) -> Result<DailySeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let find_opt = |name: &Option<String>| name.as_deref().map(find).transpose();
    let i_date = find(&columns.date)?;
    let i_deaths = find(&columns.deaths)?;
    let i_tmean = find(&columns.tmean)?;
    let i_pm10 = find_opt(&columns.pm10)?;
    let i_o3 = find_opt(&columns.o3)?;
    let i_holiday = find_opt(&columns.holiday)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // Header is line 1.
        let line = i + 2;
        let cell = |idx: usize| row.get(idx).unwrap_or("");
        let parse_err = |column: &str, message: String| Error::Parse {
            row: line,
            column: column.to_string(),
            message,
        };
        let required = |idx: usize, column: &str| -> Result<&str> {
            let v = cell(idx);
            if v.is_empty() {
                Err(Error::MissingValue {
                    row: line,
                    column: column.to_string(),
                })
            } else {
                Ok(v)
            }
        };
        let optional_f64 = |idx: Option<usize>, column: &str| -> Result<Option<f64>> {
            match idx.map(cell) {
                None | Some("") => Ok(None),
                Some(v) => v
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| parse_err(column, format!("'{v}': {e}"))),
            }
        };

        let raw_date = required(i_date, &columns.date)?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|e| parse_err(&columns.date, format!("'{raw_date}': {e}")))?;
        let raw_deaths = required(i_deaths, &columns.deaths)?;
        let deaths = raw_deaths
            .parse::<f64>()
            .ok()
            .filter(|d| *d >= 0.0 && d.fract() == 0.0 && *d <= f64::from(u32::MAX))
            .ok_or_else(|| {
                parse_err(
                    &columns.deaths,
                    format!("'{raw_deaths}' is not a non-negative integer count"),
                )
            })? as u32;
        let raw_t = required(i_tmean, &columns.tmean)?;
        let tmean = raw_t
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or_else(|| parse_err(&columns.tmean, format!("'{raw_t}' is not a finite number")))?;
        let pm10 = optional_f64(i_pm10, columns.pm10.as_deref().unwrap_or_default())?;
        let o3 = optional_f64(i_o3, columns.o3.as_deref().unwrap_or_default())?;
        let holiday = match i_holiday.map(cell) {
            None | Some("") | Some("0") => false,
            Some("1") => true,
            Some(v) if v.eq_ignore_ascii_case("true") => true,
            Some(v) if v.eq_ignore_ascii_case("false") => false,
            Some(v) => {
                return Err(parse_err(
                    columns.holiday.as_deref().unwrap_or_default(),
                    format!("'{v}' is not a boolean"),
                ))
            }
        };
        records.push(DailyRecord {
            date,
            deaths,
            tmean,
            pm10,
            o3,
            holiday,
        });
    }
    records.sort_by_key(|r| r.date);
    DailySeries::new(records, provenance)
}

/// Keep only days inside `window`.
pub fn restrict_to_season(series: &DailySeries, window: &SeasonWindow) -> Result<DailySeries> {
    let kept: Vec<DailyRecord> = series
        .records()
        .iter()
        .filter(|r| window.contains(r.date))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySeason);
    }
    DailySeries::new(kept, series.provenance())
}

/// Trailing available-case mean over `width` days, restarted at each block.
pub fn moving_average(values: &[Option<f64>], width: usize, blocks: &Blocks) -> Vec<Option<f64>> {
    assert!(width >= 1, "moving average width must be positive");
    assert_eq!(values.len(), blocks.len());
    (0..values.len())
        .map(|t| {
            let (sum, count) = (0..width)
                .filter_map(|j| blocks.lag(t, j))
                .filter_map(|s| values[s])
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            (count > 0).then(|| sum / count as f64)
        })
        .collect()
}

/// Calendar covariates for one day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CalendarFeature {
    /// 1-based day count from the window start in the same year.
    pub day_of_season: u32,
    pub year: i32,
    pub weekday: Weekday,
}

pub fn calendar_features(series: &DailySeries, window: &SeasonWindow) -> Vec<CalendarFeature> {
    series
        .records()
        .iter()
        .map(|r| {
            let start = window.start_in(r.date.year());
            CalendarFeature {
                day_of_season: ((r.date - start).num_days() + 1).max(0) as u32,
                year: r.date.year(),
                weekday: r.date.weekday(),
            }
        })
        .collect()
}
