//! Market data ingestion, validation and windowing.
//!
//! Series are loaded from comma-separated files with a header row. Column
//! names are resolved through a [`Schema`]; rows are sorted by timestamp and
//! validated against the OHLCV invariants and the series [`Calendar`].

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{DateTime, Datelike, Months, NaiveDate, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("calendar gap after timestamp {after}: expected {expected}, found {found}")]
    MissingBar {
        after: i64,
        expected: i64,
        found: i64,
    },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("range too short for a single split: need {needed}s, have {available}s")]
    EmptySplit { needed: i64, available: i64 },
}

/// One OHLCV record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("non-positive {name} price {v}"));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("negative volume {}", self.volume));
        }
        if self.high < self.low {
            return Err(format!("high {} below low {}", self.high, self.low));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!("low {} above min(open, close)", self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!("high {} below max(open, close)", self.high));
        }
        Ok(())
    }
}

/// Which bar-to-bar gaps are legal for a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Calendar {
    /// Every consecutive pair is exactly one interval apart (crypto 8h grid).
    Continuous,
    /// Daily bars on weekdays, skipping the declared holidays (UTC dates).
    TradingDays {
        #[serde(default)]
        holidays: BTreeSet<NaiveDate>,
    },
    /// Only strict ordering is checked (intraday sessions, synthetic data).
    #[default]
    Free,
}

impl Calendar {
    fn is_trading_day(holidays: &BTreeSet<NaiveDate>, date: NaiveDate) -> bool {
        !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) && !holidays.contains(&date)
    }

    /// Timestamp the bar after `ts` must carry, if this calendar pins it.
    pub fn next_expected(&self, ts: i64, interval_secs: i64) -> Option<i64> {
        match self {
            Calendar::Continuous => Some(ts + interval_secs),
            Calendar::TradingDays { holidays } => {
                let mut date = to_datetime(ts).date_naive();
                let time_of_day = ts.rem_euclid(SECONDS_PER_DAY);
                loop {
                    date = date.succ_opt()?;
                    if Self::is_trading_day(holidays, date) {
                        break;
                    }
                }
                let midnight = date.and_hms_opt(0, 0, 0)?.and_utc().timestamp();
                Some(midnight + time_of_day)
            }
            Calendar::Free => None,
        }
    }
}

/// Maps logical columns onto header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub timestamp: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub asset_id: String,
    pub interval_secs: i64,
    #[serde(default)]
    pub calendar: Calendar,
    pub bars: Vec<Bar>,
}

impl AssetSeries {
    /// Builds a series from bars, sorting and validating them.
    pub fn new(
        asset_id: impl Into<String>,
        interval_secs: i64,
        calendar: Calendar,
        bars: Vec<Bar>,
    ) -> Result<Self, DataError> {
        let rows: Vec<(usize, Bar)> = bars
            .into_iter()
            .enumerate()
            .map(|(i, b)| (i + 1, b))
            .collect();
        Self::from_rows(asset_id.into(), interval_secs, calendar, rows)
    }

    fn from_rows(
        asset_id: String,
        interval_secs: i64,
        calendar: Calendar,
        mut rows: Vec<(usize, Bar)>,
    ) -> Result<Self, DataError> {
        if interval_secs <= 0 {
            return Err(DataError::InvalidWindow(format!(
                "interval must be positive, got {interval_secs}"
            )));
        }
        for (row, bar) in &rows {
            bar.validate()
                .map_err(|message| DataError::Validation { row: *row, message })?;
        }
        rows.sort_by_key(|(_, b)| b.timestamp);
        for pair in rows.windows(2) {
            if pair[0].1.timestamp == pair[1].1.timestamp {
                return Err(DataError::Validation {
                    row: pair[0].0.max(pair[1].0),
                    message: format!("duplicate timestamp {}", pair[1].1.timestamp),
                });
            }
        }
        let bars: Vec<Bar> = rows.into_iter().map(|(_, b)| b).collect();
        for pair in bars.windows(2) {
            if let Some(expected) = calendar.next_expected(pair[0].timestamp, interval_secs) {
                if pair[1].timestamp != expected {
                    return Err(DataError::MissingBar {
                        after: pair[0].timestamp,
                        expected,
                        found: pair[1].timestamp,
                    });
                }
            }
        }
        Ok(Self {
            asset_id,
            interval_secs,
            calendar,
            bars,
        })
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.bars.iter().map(|b| b.timestamp).collect()
    }

    /// Index of the first bar with timestamp ≥ `ts`.
    pub fn index_at_or_after(&self, ts: i64) -> usize {
        self.bars.partition_point(|b| b.timestamp < ts)
    }

    /// Half-open `[start, end)` range covering every bar.
    pub fn range(&self) -> Option<Window> {
        let first = self.bars.first()?.timestamp;
        let last = self.bars.last()?.timestamp;
        Some(Window {
            start: first,
            end: last + 1,
        })
    }
}

/// Half-open time window `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Result<Self, DataError> {
        if end < start {
            return Err(DataError::InvalidWindow(format!(
                "end {end} before start {start}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, ts: i64) -> bool {
        self.start <= ts && ts < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {})", format_ts(self.start), format_ts(self.end))
    }
}

/// Calendar-aware duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Span {
    Seconds(i64),
    Days(i64),
    Months(u32),
}

impl Span {
    fn is_positive(&self) -> bool {
        match *self {
            Span::Seconds(s) | Span::Days(s) => s > 0,
            Span::Months(m) => m > 0,
        }
    }

    fn times(&self, n: u32) -> Span {
        match *self {
            Span::Seconds(s) => Span::Seconds(s * n as i64),
            Span::Days(d) => Span::Days(d * n as i64),
            Span::Months(m) => Span::Months(m * n),
        }
    }

    /// `ts` moved forward by this span. Month arithmetic clamps to the last
    /// day of shorter months.
    pub fn advance(&self, ts: i64) -> i64 {
        match *self {
            Span::Seconds(s) => ts + s,
            Span::Days(d) => ts + d * SECONDS_PER_DAY,
            Span::Months(m) => {
                let dt = to_datetime(ts);
                dt.checked_add_months(Months::new(m))
                    .map(|d| d.timestamp())
                    .unwrap_or(i64::MAX)
            }
        }
    }
}

pub fn to_datetime(ts: i64) -> DateTime<Utc> {
    DateTime::<Utc>::from_timestamp(ts, 0).unwrap_or(DateTime::<Utc>::MIN_UTC)
}

pub fn format_ts(ts: i64) -> String {
    to_datetime(ts).format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingSplit {
    pub train: Window,
    pub validation: Window,
    pub test: Window,
    pub step: Span,
}

impl RollingSplit {
    /// Rejects overlapping or out-of-order windows.
    pub fn new(
        train: Window,
        validation: Window,
        test: Window,
        step: Span,
    ) -> Result<Self, DataError> {
        if !step.is_positive() {
            return Err(DataError::InvalidWindow("step must be positive".into()));
        }
        if !(train.end <= validation.start
            && validation.start <= validation.end
            && validation.end <= test.start)
        {
            return Err(DataError::InvalidWindow(format!(
                "windows overlap or are out of order: train {train}, validation {validation}, test {test}"
            )));
        }
        Ok(Self {
            train,
            validation,
            test,
            step,
        })
    }
}

/// Walks train/validation/test windows forward by `step` until the test
/// window would leave `range`.
pub fn make_rolling_splits(
    range: Window,
    train_len: Span,
    val_len: Span,
    test_len: Span,
    step: Span,
) -> Result<Vec<RollingSplit>, DataError> {
    for (name, span) in [
        ("train", train_len),
        ("validation", val_len),
        ("test", test_len),
        ("step", step),
    ] {
        if !span.is_positive() {
            return Err(DataError::InvalidWindow(format!(
                "{name} length must be positive"
            )));
        }
    }
    let mut splits = Vec::new();
    for k in 0u32.. {
        let start = if k == 0 {
            range.start
        } else {
            step.times(k).advance(range.start)
        };
        let train_end = train_len.advance(start);
        let val_end = val_len.advance(train_end);
        let test_end = test_len.advance(val_end);
        if test_end > range.end {
            break;
        }
        splits.push(RollingSplit::new(
            Window {
                start,
                end: train_end,
            },
            Window {
                start: train_end,
                end: val_end,
            },
            Window {
                start: val_end,
                end: test_end,
            },
            step,
        )?);
    }
    if splits.is_empty() {
        let needed =
            test_len.advance(val_len.advance(train_len.advance(range.start))) - range.start;
        return Err(DataError::EmptySplit {
            needed,
            available: range.end - range.start,
        });
    }
    Ok(splits)
}

/// Bars with `start ≤ timestamp < end`.
pub fn slice(series: &AssetSeries, window: Window) -> AssetSeries {
    let lo = series.index_at_or_after(window.start);
    let hi = series.index_at_or_after(window.end).max(lo);
    AssetSeries {
        asset_id: series.asset_id.clone(),
        interval_secs: series.interval_secs,
        calendar: series.calendar.clone(),
        bars: series.bars[lo..hi].to_vec(),
    }
}

/// Epoch seconds, `YYYY-MM-DD` (UTC midnight) or RFC 3339.
pub fn parse_timestamp(raw: &str) -> Result<i64, String> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(d
            .and_hms_opt(0, 0, 0)
            .expect("midnight")
            .and_utc()
            .timestamp());
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    Err(format!("unparseable timestamp `{raw}`"))
}

fn parse_field(raw: &str, name: &str) -> Result<f64, String> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| format!("column `{name}`: `{raw}` is not a number"))
}

/// Reads a series from any CSV source. Row numbers in errors count data rows
/// from 1; line numbers count file lines (header is line 1).
pub fn read_series<R: std::io::Read>(
    reader: R,
    schema: &Schema,
    asset_id: &str,
    interval_secs: i64,
    calendar: Calendar,
) -> Result<AssetSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let idx = [
        col(&schema.timestamp)?,
        col(&schema.open)?,
        col(&schema.high)?,
        col(&schema.low)?,
        col(&schema.close)?,
        col(&schema.volume)?,
    ];
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let line = row + 1;
        let record = record.map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let get = |j: usize| -> Result<&str, DataError> {
            record.get(idx[j]).ok_or_else(|| DataError::Parse {
                line,
                message: format!(
                    "expected at least {} fields, found {}",
                    idx[j] + 1,
                    record.len()
                ),
            })
        };
        let parse = |j: usize, name: &str| -> Result<f64, DataError> {
            parse_field(get(j)?, name).map_err(|message| DataError::Parse { line, message })
        };
        let bar = Bar {
            timestamp: parse_timestamp(get(0)?)
                .map_err(|message| DataError::Parse { line, message })?,
            open: parse(1, &schema.open)?,
            high: parse(2, &schema.high)?,
            low: parse(3, &schema.low)?,
            close: parse(4, &schema.close)?,
            volume: parse(5, &schema.volume)?,
        };
        rows.push((row, bar));
    }
    AssetSeries::from_rows(asset_id.to_string(), interval_secs, calendar, rows)
}

pub fn load_series(
    path: &Path,
    schema: &Schema,
    asset_id: &str,
    interval_secs: i64,
    calendar: Calendar,
) -> Result<AssetSeries, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_series(file, schema, asset_id, interval_secs, calendar)
}

/// Writes the series with the default schema header. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_series<W: std::io::Write>(series: &AssetSeries, writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let s = Schema::default();
    wtr.write_record([&s.timestamp, &s.open, &s.high, &s.low, &s.close, &s.volume])?;
    for b in &series.bars {
        wtr.write_record([
            b.timestamp.to_string(),
            b.open.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.close.to_string(),
            b.volume.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_series(series: &AssetSeries, path: &Path) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    write_series(series, file).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(ts: i64, close: f64) -> Bar {
        Bar {
            timestamp: ts,
            open: close,
            high: close + 1.0,
            low: close - 1.0,
            close,
            volume: 10.0,
        }
    }

    fn month_start(year: i32, month: u32) -> i64 {
        NaiveDate::from_ymd_opt(year, month, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
            .and_utc()
            .timestamp()
    }

    #[test]
    fn loads_well_formed_file() {
        let text = "timestamp,open,high,low,close,volume\n1,10,11,9,10.5,100\n2,10.5,12,10,11,50\n3,11,11.5,10,10,70\n";
        let s = read_series(
            text.as_bytes(),
            &Schema::default(),
            "A",
            1,
            Calendar::Continuous,
        )
        .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.timestamps(), vec![1, 2, 3]);
        assert_eq!(s.bars[1].close, 11.0);
    }

    #[test]
    fn high_below_low_names_row() {
        let text = "timestamp,open,high,low,close,volume\n1,10,11,9,10,1\n2,10,8,9,10,1\n";
        let err =
            read_series(text.as_bytes(), &Schema::default(), "A", 1, Calendar::Free).unwrap_err();
        match err {
            DataError::Validation { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unsorted_rows_match_sorted_ingestion() {
        let sorted = "timestamp,open,high,low,close,volume\n1,10,11,9,10,1\n2,10,12,9,11,2\n3,11,12,10,12,3\n";
        let shuffled = "timestamp,open,high,low,close,volume\n3,11,12,10,12,3\n1,10,11,9,10,1\n2,10,12,9,11,2\n";
        let a = read_series(
            sorted.as_bytes(),
            &Schema::default(),
            "A",
            1,
            Calendar::Continuous,
        )
        .unwrap();
        let b = read_series(
            shuffled.as_bytes(),
            &Schema::default(),
            "A",
            1,
            Calendar::Continuous,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "timestamp,open,high,low,close,volume\n1,10,11,9,10,1\n2,10,x,9,10,1\n";
        match read_series(text.as_bytes(), &Schema::default(), "A", 1, Calendar::Free).unwrap_err()
        {
            DataError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_and_nonpositive_rejected() {
        let dup = "timestamp,open,high,low,close,volume\n1,10,11,9,10,1\n1,10,11,9,10,1\n";
        assert!(matches!(
            read_series(dup.as_bytes(), &Schema::default(), "A", 1, Calendar::Free),
            Err(DataError::Validation { .. })
        ));
        let neg = "timestamp,open,high,low,close,volume\n1,10,11,0,10,1\n";
        assert!(matches!(
            read_series(neg.as_bytes(), &Schema::default(), "A", 1, Calendar::Free),
            Err(DataError::Validation { row: 1, .. })
        ));
    }

    #[test]
    fn schema_maps_custom_headers() {
        let text = "Date,Open,High,Low,Adj Close,Volume\n2024-01-02,10,11,9,10,1\n2024-01-03,10,11,9,10,1\n";
        let schema = Schema {
            timestamp: "Date".into(),
            open: "Open".into(),
            high: "High".into(),
            low: "Low".into(),
            close: "Adj Close".into(),
            volume: "Volume".into(),
        };
        let s = read_series(
            text.as_bytes(),
            &schema,
            "A",
            SECONDS_PER_DAY,
            Calendar::TradingDays {
                holidays: Default::default(),
            },
        )
        .unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn trading_day_calendar_skips_weekends_but_rejects_gaps() {
        // 2024-01-05 is a Friday, 2024-01-08 the next Monday.
        let fri = month_start(2024, 1) + 4 * SECONDS_PER_DAY;
        let mon = fri + 3 * SECONDS_PER_DAY;
        let tue = mon + SECONDS_PER_DAY;
        let cal = Calendar::TradingDays {
            holidays: Default::default(),
        };
        assert!(AssetSeries::new(
            "A",
            SECONDS_PER_DAY,
            cal.clone(),
            vec![bar(fri, 10.0), bar(mon, 10.0)]
        )
        .is_ok());
        assert!(matches!(
            AssetSeries::new(
                "A",
                SECONDS_PER_DAY,
                cal,
                vec![bar(fri, 10.0), bar(tue, 10.0)]
            ),
            Err(DataError::MissingBar { .. })
        ));
        let holiday = Calendar::TradingDays {
            holidays: [NaiveDate::from_ymd_opt(2024, 1, 8).unwrap()]
                .into_iter()
                .collect(),
        };
        assert!(AssetSeries::new(
            "A",
            SECONDS_PER_DAY,
            holiday,
            vec![bar(fri, 10.0), bar(tue, 10.0)]
        )
        .is_ok());
    }

    #[test]
    fn continuous_calendar_rejects_missing_bar() {
        let h8 = 8 * 3600;
        let bars = vec![bar(0, 10.0), bar(h8, 10.0), bar(3 * h8, 10.0)];
        assert!(matches!(
            AssetSeries::new("BTC", h8, Calendar::Continuous, bars),
            Err(DataError::MissingBar { expected, .. }) if expected == 2 * h8
        ));
    }

    #[test]
    fn twelve_month_range_gives_two_splits() {
        let range = Window::new(month_start(2020, 1), month_start(2021, 1)).unwrap();
        let splits = make_rolling_splits(
            range,
            Span::Months(6),
            Span::Months(1),
            Span::Months(1),
            Span::Months(3),
        )
        .unwrap();
        assert_eq!(splits.len(), 2);
        // test windows start at months 7 and 10 counted from the range start
        assert_eq!(splits[0].test.start, month_start(2020, 8));
        assert_eq!(splits[1].test.start, month_start(2020, 11));
        for s in &splits {
            assert!(range.start <= s.test.start && s.test.end <= range.end);
        }
    }

    #[test]
    fn exact_range_gives_one_split() {
        let range = Window::new(month_start(2020, 1), month_start(2020, 9)).unwrap();
        let splits = make_rolling_splits(
            range,
            Span::Months(6),
            Span::Months(1),
            Span::Months(1),
            Span::Months(3),
        )
        .unwrap();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].test.end, range.end);
    }

    #[test]
    fn monthly_step_on_ten_months_gives_three_splits() {
        let range = Window::new(month_start(2020, 1), month_start(2020, 11)).unwrap();
        let splits = make_rolling_splits(
            range,
            Span::Months(6),
            Span::Months(1),
            Span::Months(1),
            Span::Months(1),
        )
        .unwrap();
        assert_eq!(splits.len(), 3);
        for pair in splits.windows(2) {
            assert_eq!(
                Span::Months(1).advance(pair[0].train.start),
                pair[1].train.start
            );
            // test_len == step: consecutive test windows tile without gaps
            assert_eq!(pair[0].test.end, pair[1].test.start);
        }
    }

    #[test]
    fn short_range_is_an_error() {
        let range = Window::new(month_start(2020, 1), month_start(2020, 5)).unwrap();
        assert!(matches!(
            make_rolling_splits(
                range,
                Span::Months(6),
                Span::Months(1),
                Span::Months(1),
                Span::Months(1)
            ),
            Err(DataError::EmptySplit { .. })
        ));
    }

    #[test]
    fn overlapping_split_rejected() {
        let w = |a, b| Window { start: a, end: b };
        assert!(RollingSplit::new(w(0, 10), w(5, 12), w(12, 14), Span::Seconds(1)).is_err());
        assert!(RollingSplit::new(w(0, 10), w(10, 12), w(12, 14), Span::Seconds(0)).is_err());
    }

    #[test]
    fn slice_boundaries() {
        let s = AssetSeries::new(
            "A",
            1,
            Calendar::Continuous,
            (0..5).map(|t| bar(t, 10.0)).collect(),
        )
        .unwrap();
        assert_eq!(slice(&s, s.range().unwrap()), s);
        assert!(slice(
            &s,
            Window {
                start: 100,
                end: 200
            }
        )
        .is_empty());
        let half = slice(&s, Window { start: 1, end: 3 });
        assert_eq!(half.timestamps(), vec![1, 2]);
    }
}
