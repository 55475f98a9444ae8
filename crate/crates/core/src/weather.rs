//! Hourly weather observations in the OpenWeather history field layout.
//!
//! Input is either a JSON array of flat objects or a CSV with exactly the
//! [`WEATHER_FIELDS`] header. `dt` is Unix seconds, UTC. Precipitation and
//! level fields are optional; OpenWeather omits rain/snow keys on dry hours,
//! so absent values read as 0 and are tallied in [`WeatherParse::absent`].

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RowError;
use crate::time::Timestamp;

pub const WEATHER_FIELDS: [&str; 19] = [
    "dt",
    "temp",
    "feels_like",
    "temp_min",
    "temp_max",
    "pressure",
    "sea_level",
    "grnd_level",
    "humidity",
    "wind_speed",
    "wind_deg",
    "rain_1h",
    "rain_3h",
    "snow_1h",
    "snow_3h",
    "clouds_all",
    "weather_id",
    "weather_main",
    "weather_description",
];

const OPTIONAL_FIELDS: [&str; 6] = ["sea_level", "grnd_level", "rain_1h", "rain_3h", "snow_1h", "snow_3h"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    #[serde(with = "unix_secs")]
    pub dt: Timestamp,
    pub temp: f64,
    pub feels_like: f64,
    pub temp_min: f64,
    pub temp_max: f64,
    pub pressure: f64,
    pub sea_level: f64,
    pub grnd_level: f64,
    pub humidity: f64,
    pub wind_speed: f64,
    pub wind_deg: f64,
    pub rain_1h: f64,
    pub rain_3h: f64,
    pub snow_1h: f64,
    pub snow_3h: f64,
    pub clouds_all: f64,
    pub weather_id: i64,
    pub weather_main: String,
    pub weather_description: String,
}

const NUMERIC_COUNT: usize = 15;

impl WeatherObservation {
    fn numeric(&self) -> [f64; NUMERIC_COUNT] {
        [
            self.temp,
            self.feels_like,
            self.temp_min,
            self.temp_max,
            self.pressure,
            self.sea_level,
            self.grnd_level,
            self.humidity,
            self.wind_speed,
            self.wind_deg,
            self.rain_1h,
            self.rain_3h,
            self.snow_1h,
            self.snow_3h,
            self.clouds_all,
        ]
    }

    fn set_numeric(&mut self, v: [f64; NUMERIC_COUNT]) {
        [
            self.temp,
            self.feels_like,
            self.temp_min,
            self.temp_max,
            self.pressure,
            self.sea_level,
            self.grnd_level,
            self.humidity,
            self.wind_speed,
            self.wind_deg,
            self.rain_1h,
            self.rain_3h,
            self.snow_1h,
            self.snow_3h,
            self.clouds_all,
        ] = v;
    }

    /// Checks the value ranges of a single observation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let pct = |name: &str, v: f64| {
            if (0.0..=100.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name}={v} outside [0, 100]"))
            }
        };
        if let Some((i, _)) = self.numeric().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(format!("non-finite value in field {}", WEATHER_FIELDS[i + 1]));
        }
        pct("humidity", self.humidity)?;
        pct("clouds_all", self.clouds_all)?;
        if self.wind_speed < 0.0 {
            return Err(format!("wind_speed={} is negative", self.wind_speed));
        }
        if !(0.0..360.0).contains(&self.wind_deg) {
            return Err(format!("wind_deg={} outside [0, 360)", self.wind_deg));
        }
        for (name, v) in [
            ("rain_1h", self.rain_1h),
            ("rain_3h", self.rain_3h),
            ("snow_1h", self.snow_1h),
            ("snow_3h", self.snow_3h),
        ] {
            if v < 0.0 {
                return Err(format!("{name}={v} is negative"));
            }
        }
        if !(self.temp_min <= self.temp && self.temp <= self.temp_max) {
            return Err(format!(
                "temperatures out of order: temp_min={} temp={} temp_max={}",
                self.temp_min, self.temp, self.temp_max
            ));
        }
        Ok(())
    }
}

mod unix_secs {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::time::Timestamp;

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(ts.0)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        i64::deserialize(d).map(Timestamp)
    }
}

/// Wire form with every field optional, so missing keys become row errors or
/// absence counts instead of failing the whole file.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct RawObservation {
    dt: Option<i64>,
    temp: Option<f64>,
    feels_like: Option<f64>,
    temp_min: Option<f64>,
    temp_max: Option<f64>,
    pressure: Option<f64>,
    sea_level: Option<f64>,
    grnd_level: Option<f64>,
    humidity: Option<f64>,
    wind_speed: Option<f64>,
    wind_deg: Option<f64>,
    rain_1h: Option<f64>,
    rain_3h: Option<f64>,
    snow_1h: Option<f64>,
    snow_3h: Option<f64>,
    clouds_all: Option<f64>,
    weather_id: Option<i64>,
    weather_main: Option<String>,
    weather_description: Option<String>,
}

impl RawObservation {
    fn into_observation(self, absent: &mut BTreeMap<String, usize>) -> std::result::Result<WeatherObservation, String> {
        fn req<T>(v: Option<T>, name: &str) -> std::result::Result<T, String> {
            v.ok_or_else(|| format!("missing required field {name}"))
        }
        let mut opt = |v: Option<f64>, name: &str| {
            v.unwrap_or_else(|| {
                *absent.entry(name.to_string()).or_default() += 1;
                0.0
            })
        };
        let obs = WeatherObservation {
            sea_level: opt(self.sea_level, "sea_level"),
            grnd_level: opt(self.grnd_level, "grnd_level"),
            rain_1h: opt(self.rain_1h, "rain_1h"),
            rain_3h: opt(self.rain_3h, "rain_3h"),
            snow_1h: opt(self.snow_1h, "snow_1h"),
            snow_3h: opt(self.snow_3h, "snow_3h"),
            dt: Timestamp(req(self.dt, "dt")?),
            temp: req(self.temp, "temp")?,
            feels_like: req(self.feels_like, "feels_like")?,
            temp_min: req(self.temp_min, "temp_min")?,
            temp_max: req(self.temp_max, "temp_max")?,
            pressure: req(self.pressure, "pressure")?,
            humidity: req(self.humidity, "humidity")?,
            wind_speed: req(self.wind_speed, "wind_speed")?,
            wind_deg: req(self.wind_deg, "wind_deg")?,
            clouds_all: req(self.clouds_all, "clouds_all")?,
            weather_id: req(self.weather_id, "weather_id")?,
            weather_main: req(self.weather_main, "weather_main")?,
            weather_description: req(self.weather_description, "weather_description")?,
        };
        obs.validate()?;
        Ok(obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeatherFormat {
    JsonArray,
    Csv,
}

impl WeatherFormat {
    /// Guesses from the file extension; anything but `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => WeatherFormat::Csv,
            _ => WeatherFormat::JsonArray,
        }
    }
}

#[derive(Debug, Default)]
pub struct WeatherParse {
    /// Valid observations sorted by `dt`, one per distinct `dt`.
    pub observations: Vec<WeatherObservation>,
    /// Rejected rows; `line` is the CSV line or the 1-based JSON array index.
    pub errors: Vec<RowError>,
    /// Per optional field, how many rows lacked it.
    pub absent: BTreeMap<String, usize>,
    pub duplicate_dt: usize,
    /// Set when the input was not sorted by `dt`.
    pub resorted: bool,
}

pub fn parse_weather<R: Read>(reader: R, format: WeatherFormat) -> Result<WeatherParse> {
    let mut out = WeatherParse::default();
    let mut rows: Vec<WeatherObservation> = Vec::new();
    match format {
        WeatherFormat::JsonArray => {
            let values: Vec<serde_json::Value> = serde_json::from_reader(reader)?;
            for (i, v) in values.into_iter().enumerate() {
                let parsed = serde_json::from_value::<RawObservation>(v)
                    .map_err(|e| e.to_string())
                    .and_then(|raw| raw.into_observation(&mut out.absent));
                match parsed {
                    Ok(obs) => rows.push(obs),
                    Err(message) => out.errors.push(RowError {
                        line: i as u64 + 1,
                        message,
                    }),
                }
            }
        }
        WeatherFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(reader);
            let header = rdr.headers()?.clone();
            if header.iter().collect::<Vec<_>>() != WEATHER_FIELDS {
                return Err(Error::Format(format!(
                    "weather CSV header must be {:?}, found {:?}",
                    WEATHER_FIELDS.join(","),
                    header.iter().collect::<Vec<_>>().join(",")
                )));
            }
            let mut record = csv::StringRecord::new();
            loop {
                let res = rdr.read_record(&mut record);
                let line = record.position().map_or(0, |p| p.line());
                match res {
                    Ok(false) => break,
                    Ok(true) => {
                        let parsed = record
                            .deserialize::<RawObservation>(Some(&header))
                            .map_err(|e| e.to_string())
                            .and_then(|raw| raw.into_observation(&mut out.absent));
                        match parsed {
                            Ok(obs) => rows.push(obs),
                            Err(message) => out.errors.push(RowError { line, message }),
                        }
                    }
                    Err(e) => out.errors.push(RowError {
                        line,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }

    if rows.windows(2).any(|w| w[0].dt > w[1].dt) {
        log::warn!("weather observations not sorted by dt; sorting");
        out.resorted = true;
        rows.sort_by_key(|o| o.dt);
    }
    let mut seen = HashSet::new();
    for obs in rows {
        if seen.insert(obs.dt) {
            out.observations.push(obs);
        } else {
            out.duplicate_dt += 1;
        }
    }
    if out.duplicate_dt > 0 {
        log::warn!("{} weather observations with duplicate dt dropped", out.duplicate_dt);
    }
    Ok(out)
}

pub fn write_weather_json<W: Write>(mut w: W, observations: &[WeatherObservation]) -> Result<()> {
    writeln!(w, "[")?;
    for (i, obs) in observations.iter().enumerate() {
        let sep = if i + 1 == observations.len() { "" } else { "," };
        writeln!(w, "  {}{sep}", serde_json::to_string(obs)?)?;
    }
    writeln!(w, "]")?;
    Ok(())
}

pub fn write_weather_csv<W: Write>(w: W, observations: &[WeatherObservation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if observations.is_empty() {
        wtr.write_record(WEATHER_FIELDS)?;
    }
    for obs in observations {
        wtr.serialize(obs)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Hour-keyed weather, built by [`hourly_lookup`].
#[derive(Clone, Debug, Default)]
pub struct WeatherLookup {
    by_hour: BTreeMap<Timestamp, WeatherObservation>,
}

impl WeatherLookup {
    pub fn get(&self, hour: Timestamp) -> Option<&WeatherObservation> {
        self.by_hour.get(&hour.floor_hour())
    }

    pub fn len(&self) -> usize {
        self.by_hour.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hour.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WeatherObservation> {
        self.by_hour.values()
    }
}

/// Keys observations by hour. Several observations in one hour are merged:
/// numeric fields by arithmetic mean, categorical fields (and `weather_id`)
/// by mode with ties going to the smallest value.
pub fn hourly_lookup(observations: &[WeatherObservation]) -> WeatherLookup {
    let mut groups: BTreeMap<Timestamp, Vec<&WeatherObservation>> = BTreeMap::new();
    for obs in observations {
        groups.entry(obs.dt.floor_hour()).or_default().push(obs);
    }
    let by_hour = groups
        .into_iter()
        .map(|(hour, group)| {
            let mut merged = group[0].clone();
            merged.dt = hour;
            if group.len() > 1 {
                let mut sums = [0.0; NUMERIC_COUNT];
                for obs in &group {
                    for (s, v) in sums.iter_mut().zip(obs.numeric()) {
                        *s += v;
                    }
                }
                merged.set_numeric(sums.map(|s| s / group.len() as f64));
                merged.weather_id = mode(group.iter().map(|o| o.weather_id));
                merged.weather_main = mode(group.iter().map(|o| o.weather_main.clone()));
                merged.weather_description = mode(group.iter().map(|o| o.weather_description.clone()));
            }
            (hour, merged)
        })
        .collect();
    WeatherLookup { by_hour }
}

fn mode<T: Ord>(values: impl Iterator<Item = T>) -> T {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    // BTreeMap iterates in ascending order, so the first hit is the smallest.
    counts
        .into_iter()
        .find(|(_, c)| *c == best)
        .map(|(v, _)| v)
        .expect("mode of an empty group")
}

/// Whether `name` is one of the optional fields that default to 0.
pub fn is_optional_field(name: &str) -> bool {
    OPTIONAL_FIELDS.contains(&name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(dt: i64, extra: &str) -> String {
        format!(
            r#"{{"dt":{dt},"temp":15.2,"feels_like":14.0,"temp_min":14.0,"temp_max":16.0,"pressure":1012,
               "humidity":60,"wind_speed":3.1,"wind_deg":200,"clouds_all":40,"weather_id":802,
               "weather_main":"Clouds","weather_description":"scattered clouds"{extra}}}"#
        )
    }

    fn parse_json(items: &[String]) -> WeatherParse {
        let text = format!("[{}]", items.join(","));
        parse_weather(text.as_bytes(), WeatherFormat::JsonArray).unwrap()
    }

    #[test]
    fn absent_precipitation_defaults_to_zero() {
        let parsed = parse_json(&[obj(1_492_779_600, "")]);
        assert!(parsed.errors.is_empty());
        let o = &parsed.observations[0];
        assert_eq!((o.temp, o.humidity), (15.2, 60.0));
        assert_eq!((o.rain_1h, o.rain_3h), (0.0, 0.0));
        assert_eq!(parsed.absent["rain_1h"], 1);
        assert_eq!(parsed.absent["rain_3h"], 1);
        assert_eq!(parsed.absent["sea_level"], 1);
        assert!(is_optional_field("snow_3h"));
    }

    #[test]
    fn out_of_range_rows_are_rejected() {
        let bad = obj(1_492_779_600, "").replace("\"humidity\":60", "\"humidity\":120");
        let parsed = parse_json(&[bad, obj(1_492_783_200, r#","rain_1h":-1"#), obj(1_492_786_800, "")]);
        assert_eq!(parsed.observations.len(), 1);
        assert_eq!(parsed.errors.len(), 2);
        assert_eq!(parsed.errors[0].line, 1);
        assert!(parsed.errors[0].message.contains("humidity"));
        assert!(parsed.errors[1].message.contains("rain_1h"));
    }

    #[test]
    fn missing_required_field_is_a_row_error() {
        let parsed = parse_json(&[obj(1_492_779_600, "").replace("\"temp\":15.2,", "")]);
        assert!(parsed.observations.is_empty());
        assert!(parsed.errors[0].message.contains("temp"));
    }

    #[test]
    fn duplicates_and_order() {
        let first = obj(1_492_783_200, r#","rain_1h":0.5"#);
        let parsed = parse_json(&[first, obj(1_492_783_200, ""), obj(1_492_779_600, "")]);
        assert_eq!(parsed.duplicate_dt, 1);
        assert!(parsed.resorted);
        let dts: Vec<i64> = parsed.observations.iter().map(|o| o.dt.0).collect();
        assert_eq!(dts, [1_492_779_600, 1_492_783_200]);
        // Stable sort keeps the first of the duplicates.
        assert_eq!(parsed.observations[1].rain_1h, 0.5);
    }

    #[test]
    fn csv_roundtrip_and_strict_header() {
        let parsed = parse_json(&[obj(1_492_779_600, r#","rain_1h":1.5"#), obj(1_492_783_200, "")]);
        let mut buf = Vec::new();
        write_weather_csv(&mut buf, &parsed.observations).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&WEATHER_FIELDS.join(",")));
        let again = parse_weather(buf.as_slice(), WeatherFormat::Csv).unwrap();
        assert_eq!(again.observations, parsed.observations);

        let swapped = text.replacen("temp,feels_like", "feels_like,temp", 1);
        assert!(parse_weather(swapped.as_bytes(), WeatherFormat::Csv).is_err());

        let mut json = Vec::new();
        write_weather_json(&mut json, &parsed.observations).unwrap();
        let again = parse_weather(json.as_slice(), WeatherFormat::JsonArray).unwrap();
        assert_eq!(again.observations, parsed.observations);
    }

    #[test]
    fn csv_empty_optional_cells_count_as_absent() {
        let header = WEATHER_FIELDS.join(",");
        let row = "1492779600,15.2,14,14,16,1012,,,60,3.1,200,,,,,40,802,Clouds,scattered clouds";
        let parsed = parse_weather(format!("{header}\n{row}\n").as_bytes(), WeatherFormat::Csv).unwrap();
        assert!(parsed.errors.is_empty(), "{:?}", parsed.errors);
        assert_eq!(parsed.absent.values().sum::<usize>(), 6);
    }

    #[test]
    fn hourly_lookup_merges_within_an_hour() {
        let parsed = parse_json(&[obj(1_492_779_600, ""), obj(1_492_783_200, "")]);
        let lookup = hourly_lookup(&parsed.observations);
        assert_eq!(lookup.len(), 2);
        assert_eq!(lookup.get(Timestamp(1_492_779_600 + 1800)).unwrap(), &parsed.observations[0]);

        let a = parse_json(&[obj(1_492_779_600, "")]).observations.remove(0);
        let mut b = a.clone();
        b.dt = Timestamp(a.dt.0 + 1200);
        b.temp = 12.0;
        b.temp_min = 11.0;
        b.temp_max = 17.0;
        b.weather_main = "Rain".into();
        let mut a = a;
        a.temp = 10.0;
        a.temp_min = 9.0;
        let merged = hourly_lookup(&[a.clone(), b]);
        let m = merged.get(a.dt).unwrap();
        assert_eq!(m.temp, 11.0);
        assert_eq!(m.weather_main, "Clouds");
        assert_eq!(m.dt, a.dt);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(WeatherFormat::from_path(Path::new("w.CSV")), WeatherFormat::Csv);
        assert_eq!(WeatherFormat::from_path(Path::new("w.json")), WeatherFormat::JsonArray);
    }
}
