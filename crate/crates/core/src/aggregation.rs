//! Per-minute and hourly waiting-passenger counts from kept segments.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cleaning::Segment;
use crate::error::{Error, Result};
use crate::time::{Timestamp, SECS_PER_HOUR, SECS_PER_MINUTE};

/// Distinct devices with a kept segment overlapping one minute at one stop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinuteCount {
    #[serde(rename = "bus_stop")]
    pub stop: String,
    #[serde(rename = "timestamp_utc")]
    pub minute: Timestamp,
    pub count: u32,
}

/// Mean of the 60 per-minute counts in an hour, absent minutes counting as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourlyCount {
    #[serde(rename = "bus_stop")]
    pub stop: String,
    #[serde(rename = "hour_utc")]
    pub hour: Timestamp,
    pub count: f64,
}

/// Inclusive range of UTC dates covered by an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("date range ends ({end}) before it starts ({start})")));
        }
        Ok(DateRange { start, end })
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }

    /// First hour of `start` up to and including the last hour of `end`.
    pub fn hours(&self) -> impl Iterator<Item = Timestamp> {
        let first = Timestamp::from_date(self.start).0;
        let n = self.days() * 24;
        (0..n).map(move |h| Timestamp(first + h * SECS_PER_HOUR))
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        let d = ts.date();
        self.start <= d && d <= self.end
    }
}

/// A segment `[start, end]` counts in minute `m` when
/// `start <= m + 59s` and `end >= m`.
pub fn minute_counts(segments: &[Segment]) -> Vec<MinuteCount> {
    let mut hits = Vec::new();
    for s in segments {
        let first = s.start.floor_minute().0;
        let last = s.end.floor_minute().0;
        let mut m = first;
        while m <= last {
            hits.push((s.stop.as_str(), m, s.device));
            m += SECS_PER_MINUTE;
        }
    }
    hits.sort_unstable();
    hits.dedup();

    let mut out: Vec<MinuteCount> = Vec::new();
    for (stop, minute, _) in hits {
        match out.last_mut() {
            Some(last) if last.stop == stop && last.minute.0 == minute => last.count += 1,
            _ => out.push(MinuteCount {
                stop: stop.to_string(),
                minute: Timestamp(minute),
                count: 1,
            }),
        }
    }
    out
}

/// Hourly means over `range`, one row per (stop, hour) including quiet hours.
///
/// Stops come from `stops` plus any stop present in `minutes`. Minutes outside
/// the range are ignored.
pub fn hourly_counts(minutes: &[MinuteCount], range: &DateRange, stops: &[String]) -> Vec<HourlyCount> {
    let mut sums: BTreeMap<(&str, i64), u64> = BTreeMap::new();
    let mut all_stops: BTreeSet<&str> = stops.iter().map(String::as_str).collect();
    for m in minutes {
        all_stops.insert(&m.stop);
        if range.contains(m.minute) {
            *sums.entry((m.stop.as_str(), m.minute.floor_hour().0)).or_default() += m.count as u64;
        }
    }

    let mut out = Vec::with_capacity(all_stops.len() * range.days() as usize * 24);
    for stop in all_stops {
        for hour in range.hours() {
            let sum = sums.get(&(stop, hour.0)).copied().unwrap_or(0);
            out.push(HourlyCount {
                stop: stop.to_string(),
                hour,
                count: sum as f64 / 60.0,
            });
        }
    }
    out
}

pub fn write_minute_counts_csv<W: Write>(w: W, rows: &[MinuteCount]) -> Result<()> {
    write_rows(w, rows, &["bus_stop", "timestamp_utc", "count"])
}

pub fn write_hourly_counts_csv<W: Write>(w: W, rows: &[HourlyCount]) -> Result<()> {
    write_rows(w, rows, &["bus_stop", "hour_utc", "count"])
}

pub fn read_hourly_counts_csv<R: Read>(r: R) -> Result<Vec<HourlyCount>> {
    read_rows(r, &["bus_stop", "hour_utc", "count"])
}

pub fn read_minute_counts_csv<R: Read>(r: R) -> Result<Vec<MinuteCount>> {
    read_rows(r, &["bus_stop", "timestamp_utc", "count"])
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T], header: &[&str]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(header)?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: serde::de::DeserializeOwned>(r: R, header: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(r);
    let found = rdr.headers()?.clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(Error::Format(format!("expected header {header:?}, found {found:?}")));
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}
