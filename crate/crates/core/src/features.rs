//! Design-matrix construction.
//!
//! Hourly counts are joined with the weather of the same hour and with
//! calendar features computed in campus-local time. [`fit_transform`] splits
//! the joined rows, fits one-hot vocabularies and z-score statistics on the
//! training part only, and encodes all three parts with them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate, Timelike, Weekday};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::HourlyCount;
use crate::error::{Error, Result};
use crate::time::{Timestamp, SECS_PER_HOUR};
use crate::weather::{WeatherLookup, WeatherObservation};

pub const NUMERIC_FEATURES: [&str; 15] = [
    "temp",
    "feels_like",
    "temp_min",
    "temp_max",
    "pressure",
    "humidity",
    "wind_speed",
    "wind_deg",
    "rain_1h",
    "rain_3h",
    "snow_1h",
    "snow_3h",
    "clouds_all",
    "week_of_semester",
    "hour_of_day",
];

pub const CATEGORICAL_GROUPS: [&str; 6] = [
    "bus_stop",
    "weather_main",
    "weather_description",
    "weekday_name",
    "is_weekend",
    "is_morning",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampusCalendar {
    /// First day of the semester, local date.
    pub semester_start: NaiveDate,
    /// Local time minus UTC, hours.
    pub utc_offset: i32,
    /// Local hours before this one count as morning.
    pub morning_end_hour: u32,
}

impl Default for CampusCalendar {
    fn default() -> Self {
        CampusCalendar {
            semester_start: NaiveDate::from_ymd_opt(2017, 1, 9).unwrap(),
            utc_offset: -4,
            morning_end_hour: 12,
        }
    }
}

impl CampusCalendar {
    pub fn validate(&self) -> Result<()> {
        if !(-12..=14).contains(&self.utc_offset) {
            return Err(Error::Config(format!("utc_offset {} outside [-12, 14]", self.utc_offset)));
        }
        if self.morning_end_hour > 24 {
            return Err(Error::Config(format!("morning_end_hour {} > 24", self.morning_end_hour)));
        }
        Ok(())
    }

    pub fn local(&self, ts: Timestamp) -> chrono::NaiveDateTime {
        Timestamp(ts.0 + self.utc_offset as i64 * SECS_PER_HOUR).naive()
    }
}

/// One joined (stop, hour) observation before encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub stop: String,
    pub hour: Timestamp,
    pub target: f64,
    /// Values in [`NUMERIC_FEATURES`] order.
    pub numeric: [f64; 15],
    /// Values in [`CATEGORICAL_GROUPS`] order.
    pub categorical: [String; 6],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejection {
    NoWeather,
    BeforeSemester { local_date: NaiveDate },
}

fn weekday_name(d: Weekday) -> &'static str {
    match d {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Builds the feature row for one hourly count and the weather of its hour.
pub fn derive_features(
    count: &HourlyCount,
    wx: &WeatherObservation,
    cal: &CampusCalendar,
) -> std::result::Result<FeatureRow, Rejection> {
    let local = cal.local(count.hour);
    let local_date = local.date();
    if local_date < cal.semester_start {
        return Err(Rejection::BeforeSemester { local_date });
    }
    let week = (local_date - cal.semester_start).num_days() / 7 + 1;
    let weekday = local_date.weekday();
    let is_weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
    Ok(FeatureRow {
        stop: count.stop.clone(),
        hour: count.hour,
        target: count.count,
        numeric: [
            wx.temp,
            wx.feels_like,
            wx.temp_min,
            wx.temp_max,
            wx.pressure,
            wx.humidity,
            wx.wind_speed,
            wx.wind_deg,
            wx.rain_1h,
            wx.rain_3h,
            wx.snow_1h,
            wx.snow_3h,
            wx.clouds_all,
            week as f64,
            local.hour() as f64,
        ],
        categorical: [
            count.stop.clone(),
            wx.weather_main.clone(),
            wx.weather_description.clone(),
            weekday_name(weekday).to_string(),
            flag(is_weekend),
            flag(local.hour() < cal.morning_end_hour),
        ],
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinReport {
    pub rows_in: usize,
    pub rows_out: usize,
    pub dropped_no_weather: usize,
    pub rejected_pre_semester: usize,
}

/// Joins every hourly count with its weather. Hours without weather are
/// dropped, never interpolated.
pub fn join(counts: &[HourlyCount], weather: &WeatherLookup, cal: &CampusCalendar) -> (Vec<FeatureRow>, JoinReport) {
    let mut report = JoinReport {
        rows_in: counts.len(),
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(counts.len());
    for c in counts {
        let res = weather
            .get(c.hour)
            .ok_or(Rejection::NoWeather)
            .and_then(|wx| derive_features(c, wx, cal));
        match res {
            Ok(row) => rows.push(row),
            Err(Rejection::NoWeather) => report.dropped_no_weather += 1,
            Err(Rejection::BeforeSemester { .. }) => report.rejected_pre_semester += 1,
        }
    }
    report.rows_out = rows.len();
    (rows, report)
}

fn joined_header() -> Vec<String> {
    ["bus_stop", "hour_utc", "count"]
        .into_iter()
        .chain(NUMERIC_FEATURES)
        .chain(CATEGORICAL_GROUPS[1..].iter().copied())
        .map(String::from)
        .collect()
}

pub fn write_joined_csv<W: Write>(w: W, rows: &[FeatureRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(joined_header())?;
    for r in rows {
        let mut rec = vec![r.stop.clone(), r.hour.to_string(), r.target.to_string()];
        rec.extend(r.numeric.iter().map(f64::to_string));
        rec.extend(r.categorical[1..].iter().cloned());
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_joined_csv<R: Read>(r: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != joined_header() {
        return Err(Error::Format(format!("unexpected joined-rows header {header:?}")));
    }
    let num = |s: &str, line: u64| {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("line {line}: bad number {s:?}")))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut numeric = [0.0; 15];
        for (i, v) in numeric.iter_mut().enumerate() {
            *v = num(&rec[3 + i], line)?;
        }
        let stop = rec[0].to_string();
        rows.push(FeatureRow {
            hour: rec[1].parse()?,
            target: num(&rec[2], line)?,
            numeric,
            categorical: [
                stop.clone(),
                rec[18].to_string(),
                rec[19].to_string(),
                rec[20].to_string(),
                rec[21].to_string(),
                rec[22].to_string(),
            ],
            stop,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Seeded uniform shuffle over rows.
    Random,
    /// Latest hours go to test, the next latest to validation.
    TimeBlocked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction_of_train: f64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            test_fraction: 0.2,
            val_fraction_of_train: 0.2,
            mode: SplitMode::Random,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n`. `order_key` gives the time order used by
/// [`SplitMode::TimeBlocked`]; indices are assumed pre-sorted by key otherwise.
pub fn split_indices(n: usize, spec: &SplitSpec, order_key: impl Fn(usize) -> i64) -> Result<SplitIndices> {
    for (name, f) in [("test_fraction", spec.test_fraction), ("val_fraction_of_train", spec.val_fraction_of_train)] {
        if !(0.0 < f && f < 1.0) {
            return Err(Error::Config(format!("{name} must be in (0, 1), got {f}")));
        }
    }
    if n < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 rows to split, got {n}")));
    }
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_val = ((n - n_test) as f64 * spec.val_fraction_of_train).round() as usize;
    let n_train = n - n_test - n_val;
    if n_test == 0 || n_val == 0 || n_train == 0 {
        return Err(Error::InsufficientData(format!(
            "{n} rows give an empty partition (train {n_train}, val {n_val}, test {n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match spec.mode {
        SplitMode::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed)),
        SplitMode::TimeBlocked => {
            order.sort_by_key(|&i| (std::cmp::Reverse(order_key(i)), i));
        }
    }
    let mut test = order[..n_test].to_vec();
    let mut val = order[n_test..n_test + n_val].to_vec();
    let mut train = order[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, val, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Numeric,
    Onehot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Training mean, numeric columns only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean: Option<f64>,
    /// Training population standard deviation, numeric columns only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
}

impl ColumnMeta {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Numeric,
            mean: None,
            std: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub stop: String,
    pub hour: Timestamp,
}

/// Dense row-major design matrix with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<ColumnMeta>,
    data: Vec<f64>,
    pub target: Vec<f64>,
    pub keys: Vec<RowKey>,
}

impl FeatureMatrix {
    /// Builds a matrix from explicit rows. Keys default to empty stop names.
    pub fn from_rows(columns: Vec<ColumnMeta>, rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        if rows.len() != target.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                actual: target.len(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * columns.len());
        for r in rows {
            if r.len() != columns.len() {
                return Err(Error::Dimension {
                    expected: columns.len(),
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let keys = (0..rows.len())
            .map(|i| RowKey {
                stop: String::new(),
                hour: Timestamp(i as i64),
            })
            .collect();
        Ok(FeatureMatrix {
            columns,
            data,
            target,
            keys,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols());
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            data,
            target: idx.iter().map(|&i| self.target[i]).collect(),
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum ColumnSource {
    Numeric(usize),
    Onehot { group: usize, value: String },
}

/// Vocabularies and normalization statistics fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub columns: Vec<ColumnMeta>,
    sources: Vec<ColumnSource>,
    /// Category values seen in training, per group.
    pub vocabularies: BTreeMap<String, Vec<String>>,
    /// Numeric features dropped because they were constant in training.
    pub dropped_constant: Vec<String>,
}

impl FeatureEncoder {
    pub fn fit(rows: &[FeatureRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("cannot fit an encoder on zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut cols: Vec<(ColumnMeta, ColumnSource)> = Vec::new();
        let mut dropped_constant = Vec::new();
        for (j, name) in NUMERIC_FEATURES.iter().enumerate() {
            let mean = rows.iter().map(|r| r.numeric[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.numeric[j] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                dropped_constant.push(name.to_string());
                continue;
            }
            cols.push((
                ColumnMeta {
                    name: name.to_string(),
                    kind: ColumnKind::Numeric,
                    mean: Some(mean),
                    std: Some(std),
                },
                ColumnSource::Numeric(j),
            ));
        }
        let mut vocabularies = BTreeMap::new();
        for (g, group) in CATEGORICAL_GROUPS.iter().enumerate() {
            let values: BTreeSet<&str> = rows.iter().map(|r| r.categorical[g].as_str()).collect();
            for v in &values {
                cols.push((
                    ColumnMeta {
                        name: format!("{group}_{v}"),
                        kind: ColumnKind::Onehot,
                        mean: None,
                        std: None,
                    },
                    ColumnSource::Onehot {
                        group: g,
                        value: v.to_string(),
                    },
                ));
            }
            vocabularies.insert(group.to_string(), values.into_iter().map(String::from).collect());
        }
        cols.sort_by(|a, b| a.0.name.cmp(&b.0.name));
        let (columns, sources) = cols.into_iter().unzip();
        Ok(FeatureEncoder {
            columns,
            sources,
            vocabularies,
            dropped_constant,
        })
    }

    pub fn transform(&self, rows: &[FeatureRow]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.columns.len());
        for r in rows {
            for (meta, src) in self.columns.iter().zip(&self.sources) {
                data.push(match src {
                    ColumnSource::Numeric(j) => {
                        (r.numeric[*j] - meta.mean.unwrap_or(0.0)) / meta.std.unwrap_or(1.0)
                    }
                    ColumnSource::Onehot { group, value } => {
                        if &r.categorical[*group] == value {
                            1.0
                        } else {
                            0.0
                        }
                    }
                });
            }
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            data,
            target: rows.iter().map(|r| r.target).collect(),
            keys: rows
                .iter()
                .map(|r| RowKey {
                    stop: r.stop.clone(),
                    hour: r.hour,
                })
                .collect(),
        }
    }

    /// Column indices of each one-hot group.
    pub fn onehot_groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, src) in self.sources.iter().enumerate() {
            if let ColumnSource::Onehot { group, .. } = src {
                groups.entry(CATEGORICAL_GROUPS[*group].to_string()).or_default().push(i);
            }
        }
        groups
    }
}

#[derive(Clone, Debug)]
pub struct Featurized {
    pub train: FeatureMatrix,
    pub val: FeatureMatrix,
    pub test: FeatureMatrix,
    pub encoder: FeatureEncoder,
}

/// Splits rows, fits the encoder on the training part and encodes all parts.
pub fn fit_transform(rows: &[FeatureRow], split: &SplitSpec) -> Result<Featurized> {
    let mut sorted: Vec<&FeatureRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.stop, a.hour).cmp(&(&b.stop, b.hour)));
    let idx = split_indices(sorted.len(), split, |i| sorted[i].hour.0)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| sorted[i].clone()).collect::<Vec<_>>();
    let (train_rows, val_rows, test_rows) = (pick(&idx.train), pick(&idx.val), pick(&idx.test));
    let encoder = FeatureEncoder::fit(&train_rows)?;
    Ok(Featurized {
        train: encoder.transform(&train_rows),
        val: encoder.transform(&val_rows),
        test: encoder.transform(&test_rows),
        encoder,
    })
}

/// Sidecar metadata written next to matrix CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub encoder: FeatureEncoder,
    pub split: SplitSpec,
    pub rows: BTreeMap<String, usize>,
}

pub fn write_matrix_csv<W: Write>(w: W, m: &FeatureMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["bus_stop".to_string(), "hour_utc".to_string()];
    header.extend(m.column_names());
    header.push("count".into());
    wtr.write_record(&header)?;
    for i in 0..m.n_rows() {
        let mut rec = vec![m.keys[i].stop.clone(), m.keys[i].hour.to_string()];
        rec.extend(m.row(i).iter().map(f64::to_string));
        rec.push(m.target[i].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix_csv`], checking its columns
/// against `columns`.
pub fn read_matrix_csv<R: Read>(r: R, columns: &[ColumnMeta]) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header.len() < 3 || header[0] != "bus_stop" || header[1] != "hour_utc" || header[header.len() - 1] != "count" {
        return Err(Error::Format(format!("unexpected matrix header {header:?}")));
    }
    let found = &header[2..header.len() - 1];
    let expected: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
    if found != expected.as_slice() {
        return Err(column_mismatch(&expected, found));
    }
    let mut data = Vec::new();
    let mut target = Vec::new();
    let mut keys = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        keys.push(RowKey {
            stop: rec[0].to_string(),
            hour: rec[1].parse()?,
        });
        for v in rec.iter().skip(2) {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Format(format!("bad number {v:?} in matrix")))?;
            data.push(x);
        }
        target.push(data.pop().expect("count column"));
    }
    Ok(FeatureMatrix {
        columns: columns.to_vec(),
        data,
        target,
        keys,
    })
}

/// Error describing the difference between two column lists.
pub fn column_mismatch(expected: &[String], found: &[String]) -> Error {
    let missing = expected.iter().filter(|c| !found.contains(c)).cloned().collect();
    let unexpected = found.iter().filter(|c| !expected.contains(c)).cloned().collect();
    Error::ColumnMismatch { missing, unexpected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weather::hourly_lookup;
    use proptest::prelude::*;

    fn wx(dt: &str, main: &str, desc: &str) -> WeatherObservation {
        WeatherObservation {
            dt: dt.parse().unwrap(),
            temp: 15.0,
            feels_like: 14.0,
            temp_min: 14.0,
            temp_max: 16.0,
            pressure: 1012.0,
            sea_level: 0.0,
            grnd_level: 0.0,
            humidity: 60.0,
            wind_speed: 3.0,
            wind_deg: 180.0,
            rain_1h: 0.0,
            rain_3h: 0.0,
            snow_1h: 0.0,
            snow_3h: 0.0,
            clouds_all: 40.0,
            weather_id: 802,
            weather_main: main.into(),
            weather_description: desc.into(),
        }
    }

    fn count(stop: &str, hour: &str, c: f64) -> HourlyCount {
        HourlyCount {
            stop: stop.into(),
            hour: hour.parse().unwrap(),
            count: c,
        }
    }

    #[test]
    fn saturday_morning() {
        // 2017-04-22 14:00 UTC is Saturday 10:00 at UTC-4.
        let cal = CampusCalendar::default();
        let row = derive_features(
            &count("017", "2017-04-22 14:00:00", 3.0),
            &wx("2017-04-22 14:00:00", "Rain", "Rain"),
            &cal,
        )
        .unwrap();
        assert_eq!(row.categorical[3], "Saturday");
        assert_eq!(row.categorical[4], "1");
        assert_eq!(row.categorical[5], "1");
        assert_eq!(row.numeric[14], 10.0);
    }

    #[test]
    fn week_of_semester() {
        let cal = CampusCalendar {
            semester_start: NaiveDate::from_ymd_opt(2017, 4, 5).unwrap(),
            ..Default::default()
        };
        let w = wx("2017-04-05 16:00:00", "Clear", "clear sky");
        let week = |hour: &str| derive_features(&count("017", hour, 0.0), &w, &cal).map(|r| r.numeric[13]);
        assert_eq!(week("2017-04-05 16:00:00"), Ok(1.0));
        assert_eq!(week("2017-04-12 03:59:00"), Ok(1.0)); // local 04-11 23:59
        assert_eq!(week("2017-04-12 04:00:00"), Ok(2.0));
        assert!(matches!(week("2017-04-05 03:00:00"), Err(Rejection::BeforeSemester { .. })));
    }

    #[test]
    fn calendar_validation() {
        assert!(CampusCalendar::default().validate().is_ok());
        assert!(CampusCalendar { utc_offset: 15, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn join_accounts_for_every_row() {
        let cal = CampusCalendar::default();
        let lookup = hourly_lookup(&[wx("2017-04-22 14:00:00", "Clear", "clear sky")]);
        let counts = [
            count("017", "2017-04-22 14:00:00", 1.0),
            count("017", "2017-04-22 15:00:00", 1.0),
            count("017", "2016-04-22 14:00:00", 1.0),
        ];
        let mut lookup_all = vec![wx("2017-04-22 14:00:00", "Clear", "clear sky")];
        lookup_all.push(wx("2016-04-22 14:00:00", "Clear", "clear sky"));
        let (rows, report) = join(&counts, &lookup, &cal);
        assert_eq!(rows.len(), 1);
        assert_eq!(report.dropped_no_weather, 2);
        let (_, report) = join(&counts, &hourly_lookup(&lookup_all), &cal);
        assert_eq!(report.rows_out + report.dropped_no_weather + report.rejected_pre_semester, report.rows_in);
        assert_eq!(report.rejected_pre_semester, 1);
    }

    fn sample_rows(n: usize) -> Vec<FeatureRow> {
        let cal = CampusCalendar::default();
        let descs = ["light rain", "clear sky", "overcast clouds"];
        (0..n)
            .map(|i| {
                let hour = Timestamp("2017-04-05 00:00:00".parse::<Timestamp>().unwrap().0 + (i as i64 / 2) * 3600);
                let mut w = wx(&hour.to_string(), "Clouds", descs[i % 3]);
                w.temp = 10.0 + (i % 7) as f64;
                w.temp_max = 30.0;
                w.humidity = (i * 13 % 100) as f64;
                let c = count(["017", "023"][i % 2], &hour.to_string(), (i % 5) as f64);
                derive_features(&c, &w, &cal).unwrap()
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = SplitSpec { seed: 11, ..Default::default() };
        let a = split_indices(100, &spec, |i| i as i64).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (64, 16, 20));
        assert_eq!(a, split_indices(100, &spec, |i| i as i64).unwrap());
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(a, split_indices(100, &SplitSpec { seed: 12, ..Default::default() }, |i| i as i64).unwrap());
        assert!(split_indices(9, &spec, |i| i as i64).is_err());
    }

    #[test]
    fn time_blocked_split_puts_latest_rows_in_test() {
        let spec = SplitSpec { mode: SplitMode::TimeBlocked, ..Default::default() };
        let s = split_indices(100, &spec, |i| i as i64).unwrap();
        assert_eq!(s.test, (80..100).collect::<Vec<_>>());
        assert_eq!(s.val, (64..80).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_and_onehot_invariants() {
        let rows = sample_rows(200);
        let f = fit_transform(&rows, &SplitSpec::default()).unwrap();
        let names = f.train.column_names();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        // Constant in every row.
        assert!(f.encoder.dropped_constant.contains(&"temp_max".to_string()));
        assert!(f.encoder.dropped_constant.contains(&"rain_1h".to_string()));
        for (j, c) in f.train.columns.iter().enumerate() {
            if c.kind == ColumnKind::Numeric {
                let col = f.train.column(j);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                assert!(mean.abs() < 1e-9, "{} mean {mean}", c.name);
                assert!((std - 1.0).abs() < 1e-6, "{} std {std}", c.name);
            }
        }
        for m in [&f.train, &f.val, &f.test] {
            for cols in f.encoder.onehot_groups().values() {
                for r in m.rows() {
                    let s: f64 = cols.iter().map(|&j| r[j]).sum();
                    assert_eq!(s, 1.0);
                }
            }
        }
    }

    #[test]
    fn unseen_category_encodes_to_zeros() {
        let mut rows = sample_rows(50);
        let enc = FeatureEncoder::fit(&rows).unwrap();
        rows[0].categorical[2] = "tornado".into();
        let m = enc.transform(&rows[..1]);
        let group = &enc.onehot_groups()["weather_description"];
        assert_eq!(group.iter().map(|&j| m.row(0)[j]).sum::<f64>(), 0.0);
        assert!(!m.column_names().iter().any(|c| c.contains("tornado")));
    }

    #[test]
    fn matrix_and_joined_csv_roundtrip() {
        let rows = sample_rows(40);
        let mut buf = Vec::new();
        write_joined_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_joined_csv(buf.as_slice()).unwrap(), rows);

        let f = fit_transform(&rows, &SplitSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &f.test).unwrap();
        assert_eq!(read_matrix_csv(buf.as_slice(), &f.encoder.columns).unwrap(), f.test);

        let mut other = f.encoder.columns.clone();
        other.pop();
        other.push(ColumnMeta::numeric("extra"));
        match read_matrix_csv(buf.as_slice(), &other) {
            Err(Error::ColumnMismatch { missing, unexpected }) => {
                assert_eq!(missing, vec!["extra".to_string()]);
                assert_eq!(unexpected.len(), 1);
            }
            other => panic!("expected column mismatch, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn refitting_train_rows_reproduces_the_matrix(n in 10usize..120, seed: u64) {
            let rows = sample_rows(n);
            let f = fit_transform(&rows, &SplitSpec { seed, ..Default::default() }).unwrap();
            let mut sorted = rows.clone();
            sorted.sort_by(|a, b| (&a.stop, a.hour).cmp(&(&b.stop, b.hour)));
            let train_rows: Vec<FeatureRow> = f
                .train
                .keys
                .iter()
                .map(|k| sorted.iter().find(|r| r.stop == k.stop && r.hour == k.hour).unwrap().clone())
                .collect();
            prop_assert_eq!(f.encoder.transform(&train_rows), f.train);
        }
    }
}
