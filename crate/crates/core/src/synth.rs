//! Synthetic scenarios with planted ground truth.
//!
//! A scenario plants waiting passengers as device visits: each planted device
//! dwells at two different stops on one UTC day, with dwell times and RSSI
//! that pass every cleaning filter. Noise devices are added per class so that
//! each class fails exactly one filter. The planted visits give the true
//! hourly counts without going through the cleaning code.
//!
//! Days are generated independently from seeds derived from `(seed, day)`, so
//! a longer scenario starts with the same days as a shorter one.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::{DateRange, HourlyCount};
use crate::cleaning::CleaningConfig;
use crate::error::{Error, Result};
use crate::features::{ColumnMeta, FeatureMatrix};
use crate::ingest::{DeviceId, FrameRecord, MacAddress};
use crate::time::{Timestamp, SECS_PER_DAY, SECS_PER_HOUR, SECS_PER_MINUTE};
use crate::weather::WeatherObservation;

/// Waiting-passenger arrival model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandModel {
    /// Mean arrivals per stop-hour at profile 1 and stop weight 1.
    pub base_rate: f64,
    /// Per-stop multipliers, cycled when there are more stops than entries.
    pub stop_weights: Vec<f64>,
    /// Multiplier by local hour of day.
    pub hour_profile: [f64; 24],
    pub weekend_factor: f64,
    /// Applied when `rain_1h > 0`.
    pub rain_multiplier: f64,
    pub cold_threshold_c: f64,
    /// Applied when `temp < cold_threshold_c`.
    pub cold_multiplier: f64,
    /// Local time minus UTC, hours.
    pub utc_offset: i32,
}

impl Default for DemandModel {
    fn default() -> Self {
        DemandModel {
            base_rate: 4.0,
            stop_weights: vec![1.0, 1.6, 0.6, 1.3, 0.8, 1.1, 0.6],
            hour_profile: [
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.8, 1.6, 1.2, 0.7, 0.9, 1.2, 1.0, 0.8, 1.0, 1.4, 1.7, 1.1, 0.6,
                0.4, 0.3, 0.1, 0.0,
            ],
            weekend_factor: 0.4,
            rain_multiplier: 0.5,
            cold_threshold_c: 5.0,
            cold_multiplier: 0.7,
            utc_offset: -4,
        }
    }
}

impl DemandModel {
    pub fn stop_weight(&self, stop_index: usize) -> f64 {
        if self.stop_weights.is_empty() {
            1.0
        } else {
            self.stop_weights[stop_index % self.stop_weights.len()]
        }
    }

    pub fn weather_multiplier(&self, wx: &WeatherObservation) -> f64 {
        let mut m = 1.0;
        if wx.rain_1h > 0.0 {
            m *= self.rain_multiplier;
        }
        if wx.temp < self.cold_threshold_c {
            m *= self.cold_multiplier;
        }
        m
    }

    /// Expected arrivals at one stop during the UTC hour starting at `hour`.
    pub fn rate(&self, stop_index: usize, hour: Timestamp, wx: Option<&WeatherObservation>) -> f64 {
        let local = Timestamp(hour.0 + self.utc_offset as i64 * SECS_PER_HOUR).naive();
        let h = chrono::Timelike::hour(&local) as usize;
        let weekend = matches!(local.date().weekday(), Weekday::Sat | Weekday::Sun);
        let mut r = self.base_rate * self.stop_weight(stop_index) * self.hour_profile[h];
        if weekend {
            r *= self.weekend_factor;
        }
        if let Some(wx) = wx {
            r *= self.weather_multiplier(wx);
        }
        r
    }
}

/// Noise devices per class, as fractions of the planted devices of each day.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseMix {
    pub randomized: f64,
    pub single_stop: f64,
    pub rssi: f64,
    pub short_dwell: f64,
    pub long_dwell: f64,
}

impl NoiseMix {
    pub fn uniform(f: f64) -> Self {
        NoiseMix {
            randomized: f,
            single_stop: f,
            rssi: f,
            short_dwell: f,
            long_dwell: f,
        }
    }

    fn get(&self, class: NoiseClass) -> f64 {
        match class {
            NoiseClass::Randomized => self.randomized,
            NoiseClass::SingleStop => self.single_stop,
            NoiseClass::Rssi => self.rssi,
            NoiseClass::ShortDwell => self.short_dwell,
            NoiseClass::LongDwell => self.long_dwell,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseClass {
    Randomized,
    SingleStop,
    Rssi,
    ShortDwell,
    LongDwell,
}

impl NoiseClass {
    pub const ALL: [NoiseClass; 5] = [
        NoiseClass::Randomized,
        NoiseClass::SingleStop,
        NoiseClass::Rssi,
        NoiseClass::ShortDwell,
        NoiseClass::LongDwell,
    ];

    fn tag(self) -> u8 {
        self as u8 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub stops: Vec<String>,
    pub start: NaiveDate,
    pub days: u32,
    pub demand: DemandModel,
    pub noise: NoiseMix,
    /// Seconds between consecutive frames of one visit.
    pub probe_interval_s: i64,
    /// Planted dwells are drawn from `[d_min + margin, d_max - margin]`.
    pub dwell_margin_s: i64,
    pub cleaning: CleaningConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            stops: ["003", "008", "011", "017", "022", "026", "031"].map(String::from).to_vec(),
            start: NaiveDate::from_ymd_opt(2017, 4, 5).unwrap(),
            days: 30,
            demand: DemandModel::default(),
            noise: NoiseMix::uniform(0.1),
            probe_interval_s: 60,
            dwell_margin_s: 10,
            cleaning: CleaningConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.cleaning.validate()?;
        if self.stops.len() < 2 {
            return Err(Error::Config("a scenario needs at least two stops".into()));
        }
        let mut sorted = self.stops.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.stops.len() {
            return Err(Error::Config("stop names must be distinct".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("days must be positive".into()));
        }
        for c in NoiseClass::ALL {
            let f = self.noise.get(c);
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("noise fraction {c:?} = {f} outside [0, 1]")));
            }
        }
        let d = &self.demand;
        let rates = [d.base_rate, d.weekend_factor, d.rain_multiplier, d.cold_multiplier];
        if rates.iter().chain(&d.stop_weights).chain(&d.hour_profile).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("demand rates and multipliers must be finite and non-negative".into()));
        }
        if !(1..=self.cleaning.gap_s).contains(&self.probe_interval_s) {
            return Err(Error::Config(format!(
                "probe_interval_s {} must be in [1, gap_s = {}]",
                self.probe_interval_s, self.cleaning.gap_s
            )));
        }
        let (lo, hi) = self.planted_dwell();
        if self.dwell_margin_s < 0 || lo > hi {
            return Err(Error::Config(format!("dwell_margin_s {} leaves no valid dwell", self.dwell_margin_s)));
        }
        Ok(())
    }

    pub fn range(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: self.start + chrono::Days::new(self.days as u64 - 1),
        }
    }

    fn planted_dwell(&self) -> (i64, i64) {
        (
            self.cleaning.d_min_s + self.dwell_margin_s,
            self.cleaning.d_max_s - self.dwell_margin_s,
        )
    }

    /// Same layout with no noise devices.
    pub fn noise_free(mut self) -> Self {
        self.noise = NoiseMix::default();
        self
    }
}

/// One device dwelling at one stop from `start` to `start + dwell_s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub stop: usize,
    pub start: i64,
    pub dwell_s: i64,
}

impl Visit {
    fn end(&self) -> i64 {
        self.start + self.dwell_s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedDevice {
    pub mac: MacAddress,
    /// `None` for planted waiting passengers.
    pub noise: Option<NoiseClass>,
    pub visits: Vec<Visit>,
    /// Out-of-range RSSI for the whole device.
    pub bad_rssi: bool,
}

/// Planted devices and weather before frames are emitted.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub weather: Vec<WeatherObservation>,
    pub devices: Vec<PlannedDevice>,
}

/// Planted waiting devices at one stop on one UTC day.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSet {
    pub stop: String,
    pub date: NaiveDate,
    pub devices: Vec<DeviceId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub randomized: usize,
    pub single_stop: usize,
    pub rssi: usize,
    pub short_dwell: usize,
    pub long_dwell: usize,
}

impl ClassCounts {
    fn bump(&mut self, class: NoiseClass, by: usize) {
        *match class {
            NoiseClass::Randomized => &mut self.randomized,
            NoiseClass::SingleStop => &mut self.single_stop,
            NoiseClass::Rssi => &mut self.rssi,
            NoiseClass::ShortDwell => &mut self.short_dwell,
            NoiseClass::LongDwell => &mut self.long_dwell,
        } += by;
    }

    pub fn total(&self) -> usize {
        self.randomized + self.single_stop + self.rssi + self.short_dwell + self.long_dwell
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted: Vec<PlantedSet>,
    pub hourly: Vec<HourlyCount>,
    pub planted_devices: usize,
    pub planted_frames: usize,
    pub noise_devices: ClassCounts,
    pub noise_frames: ClassCounts,
    pub demand: DemandModel,
}

fn day_rng(seed: u64, day: i64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (day as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

const STREAM_WEATHER: u64 = 1;
const STREAM_DEMAND: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_FRAMES: u64 = 4;

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Hourly weather over the scenario range: diurnal temperature, a two-state
/// rain chain and clouds that follow the rain.
pub fn synth_weather(cfg: &ScenarioConfig) -> Vec<WeatherObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_WEATHER);
    let day_temp = Normal::new(8.0, 4.0).unwrap();
    let mut raining = false;
    let mut pressure = 1013.0;
    let mut base = 8.0;
    let mut out = Vec::with_capacity(cfg.days as usize * 24);
    for (k, hour) in cfg.range().hours().enumerate() {
        if k % 24 == 0 {
            base = day_temp.sample(&mut rng);
        }
        let local_h = (hour.0 / SECS_PER_HOUR + cfg.demand.utc_offset as i64).rem_euclid(24) as f64;
        let noise: f64 = StandardNormal.sample(&mut rng);
        let temp = round2(base + 5.0 * ((local_h - 15.0) / 24.0 * std::f64::consts::TAU).cos() + 0.5 * noise);
        raining = if raining { rng.random::<f64>() > 0.3 } else { rng.random::<f64>() < 0.06 };
        let step: f64 = StandardNormal.sample(&mut rng);
        pressure = (pressure + step * 0.6 + (1013.0 - pressure) * 0.05).clamp(980.0, 1040.0);
        let wind_speed = round2(rng.random_range(0.0..9.0));
        let rain_1h = if raining { round2(rng.random_range(0.2..4.0)) } else { 0.0 };
        let clouds_all = if raining { rng.random_range(85..=100) } else { rng.random_range(0..=100) } as f64;
        let humidity = if raining { rng.random_range(80..=100) } else { rng.random_range(35..=90) } as f64;
        let (id, main, desc) = if raining {
            if rain_1h < 1.0 {
                (500, "Rain", "light rain")
            } else {
                (501, "Rain", "moderate rain")
            }
        } else if clouds_all < 20.0 {
            (800, "Clear", "clear sky")
        } else if clouds_all < 50.0 {
            (802, "Clouds", "scattered clouds")
        } else {
            (803, "Clouds", "broken clouds")
        };
        out.push(WeatherObservation {
            dt: hour,
            temp,
            feels_like: round2(temp - 0.7 * wind_speed),
            temp_min: round2(temp - rng.random_range(0.0..1.5)),
            temp_max: round2(temp + rng.random_range(0.0..1.5)),
            pressure: pressure.round(),
            sea_level: 0.0,
            grnd_level: 0.0,
            humidity,
            wind_speed,
            wind_deg: rng.random_range(0..360) as f64,
            rain_1h,
            rain_3h: 0.0,
            snow_1h: 0.0,
            snow_3h: 0.0,
            clouds_all,
            weather_id: id,
            weather_main: main.into(),
            weather_description: desc.into(),
        });
    }
    out
}

/// Locally unique unicast address for device `n` of `class` on `day`.
fn device_mac(day: i64, class: u8, n: usize) -> MacAddress {
    let d = day as u16;
    let hi = ((n >> 16) as u8) << 2;
    MacAddress([hi, (d >> 8) as u8, d as u8, class, (n >> 8) as u8, n as u8])
}

fn other_stop(rng: &mut ChaCha8Rng, n_stops: usize, not: usize) -> usize {
    let s = rng.random_range(0..n_stops - 1);
    if s >= not {
        s + 1
    } else {
        s
    }
}

/// Visit start in the UTC day starting at `day_start`, leaving room for `dwell`.
fn fit_in_day(start: i64, dwell: i64, day_start: i64) -> i64 {
    start.min(day_start + SECS_PER_DAY - 1 - dwell).max(day_start)
}

fn plan_day(cfg: &ScenarioConfig, day: i64, weather: &BTreeMap<i64, &WeatherObservation>) -> Vec<PlannedDevice> {
    let n_stops = cfg.stops.len();
    let day_start = day * SECS_PER_DAY;
    let (dwell_lo, dwell_hi) = cfg.planted_dwell();
    let mut rng = day_rng(cfg.seed, day, STREAM_DEMAND);

    // Arrivals per stop, driven by the demand model.
    let mut by_stop: Vec<Vec<Visit>> = vec![Vec::new(); n_stops];
    for h in 0..24 {
        let hour = Timestamp(day_start + h * SECS_PER_HOUR);
        for (s, visits) in by_stop.iter_mut().enumerate() {
            let rate = cfg.demand.rate(s, hour, weather.get(&hour.0).copied());
            let n = if rate > 0.0 { Poisson::new(rate).unwrap().sample(&mut rng) as usize } else { 0 };
            for _ in 0..n {
                let dwell = rng.random_range(dwell_lo..=dwell_hi);
                let start = hour.0 + rng.random_range(0..SECS_PER_HOUR);
                visits.push(Visit {
                    stop: s,
                    start: fit_in_day(start, dwell, day_start),
                    dwell_s: dwell,
                });
            }
        }
    }
    for v in &mut by_stop {
        v.shuffle(&mut rng);
    }

    // Pair visits at different stops into devices; leftovers get a companion visit.
    let mut devices = Vec::new();
    let push = |visits: Vec<Visit>, devices: &mut Vec<PlannedDevice>| {
        let mac = device_mac(day, 0, devices.len());
        devices.push(PlannedDevice {
            mac,
            noise: None,
            visits,
            bad_rssi: false,
        });
    };
    loop {
        let mut order: Vec<usize> = (0..n_stops).filter(|&s| !by_stop[s].is_empty()).collect();
        order.sort_by_key(|&s| (std::cmp::Reverse(by_stop[s].len()), s));
        match order.as_slice() {
            [] => break,
            [only] => {
                let s = *only;
                while let Some(v) = by_stop[s].pop() {
                    let dwell = rng.random_range(dwell_lo..=dwell_hi);
                    let start = v.start + rng.random_range(-2 * SECS_PER_HOUR..=2 * SECS_PER_HOUR);
                    let companion = Visit {
                        stop: other_stop(&mut rng, n_stops, s),
                        start: fit_in_day(start, dwell, day_start),
                        dwell_s: dwell,
                    };
                    push(vec![v, companion], &mut devices);
                }
                break;
            }
            [a, b, ..] => {
                let (a, b) = (*a, *b);
                let va = by_stop[a].pop().unwrap();
                let vb = by_stop[b].pop().unwrap();
                let mut pair = vec![va, vb];
                pair.sort_by_key(|v| (v.start, v.stop));
                push(pair, &mut devices);
            }
        }
    }
    let planted = devices.len();

    // Noise devices around planted activity times.
    let mut rng = day_rng(cfg.seed, day, STREAM_NOISE);
    let active = |rng: &mut ChaCha8Rng| day_start + rng.random_range(10 * SECS_PER_HOUR..23 * SECS_PER_HOUR);
    let d_min = cfg.cleaning.d_min_s;
    let d_max = cfg.cleaning.d_max_s;
    for class in NoiseClass::ALL {
        let n = (cfg.noise.get(class) * planted as f64).round() as usize;
        for k in 0..n {
            let mut mac = device_mac(day, class.tag(), k);
            let n_visits = if class == NoiseClass::SingleStop { 1 } else { 2 };
            let first = rng.random_range(0..n_stops);
            let mut visits = Vec::with_capacity(n_visits);
            for v in 0..n_visits {
                let dwell = match class {
                    NoiseClass::ShortDwell => rng.random_range(0..d_min),
                    NoiseClass::LongDwell => rng.random_range(d_max + 1..=2 * d_max),
                    _ => rng.random_range(dwell_lo..=dwell_hi),
                };
                let stop = if v == 0 { first } else { other_stop(&mut rng, n_stops, first) };
                let start = active(&mut rng);
                visits.push(Visit {
                    stop,
                    start: fit_in_day(start, dwell, day_start),
                    dwell_s: dwell,
                });
            }
            if class == NoiseClass::Randomized {
                // Locally administered, group, or both.
                mac.0[0] |= [0x02, 0x01, 0x03][k % 3];
            }
            devices.push(PlannedDevice {
                mac,
                noise: Some(class),
                visits,
                bad_rssi: class == NoiseClass::Rssi,
            });
        }
    }
    devices
}

impl Scenario {
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let weather = synth_weather(cfg);
        let by_hour: BTreeMap<i64, &WeatherObservation> = weather.iter().map(|w| (w.dt.0, w)).collect();
        let first_day = Timestamp::from_date(cfg.start).day_index();
        let devices = (first_day..first_day + cfg.days as i64)
            .flat_map(|d| plan_day(cfg, d, &by_hour))
            .collect();
        Ok(Scenario {
            config: cfg.clone(),
            weather,
            devices,
        })
    }

    fn visit_times(&self, v: &Visit) -> impl Iterator<Item = i64> {
        let step = self.config.probe_interval_s;
        let (start, end) = (v.start, v.end());
        let n_regular = (v.dwell_s + step - 1) / step;
        (0..n_regular).map(move |k| start + k * step).chain(std::iter::once(end))
    }

    fn visit_frames(&self, v: &Visit) -> usize {
        let step = self.config.probe_interval_s;
        ((v.dwell_s + step - 1) / step) as usize + 1
    }

    /// Number of frames [`Scenario::frames`] would emit.
    pub fn frame_count(&self) -> usize {
        self.devices.iter().flat_map(|d| &d.visits).map(|v| self.visit_frames(v)).sum()
    }

    /// Frame records sorted by (time, stop, device address).
    pub fn frames(&self) -> Vec<FrameRecord> {
        let c = &self.config.cleaning;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(STREAM_FRAMES);
        let below = ((c.rssi_lo - 20).max(-120), c.rssi_lo - 1);
        let above = (c.rssi_hi + 1, (c.rssi_hi + 20).min(0));
        let mut out = Vec::with_capacity(self.frame_count());
        for d in &self.devices {
            let id = d.mac.anonymize();
            for v in &d.visits {
                for at in self.visit_times(v) {
                    let rssi = if !d.bad_rssi {
                        rng.random_range(c.rssi_lo..=c.rssi_hi)
                    } else if rng.random::<bool>() && below.0 <= below.1 {
                        rng.random_range(below.0..=below.1)
                    } else {
                        rng.random_range(above.0..=above.1)
                    };
                    out.push(FrameRecord {
                        stop: self.config.stops[v.stop].clone(),
                        at: Timestamp(at),
                        device: id,
                        mac: Some(d.mac),
                        rssi,
                    });
                }
            }
        }
        out.sort_by(|a, b| (a.at, &a.stop, a.mac).cmp(&(b.at, &b.stop, b.mac)));
        out
    }

    /// True counts computed from the planted visits alone.
    pub fn truth(&self) -> GroundTruth {
        let cfg = &self.config;
        let range = cfg.range();
        let origin = Timestamp::from_date(cfg.start).0;
        let minutes = cfg.days as usize * 24 * 60;
        let mut present = vec![vec![0u32; minutes]; cfg.stops.len()];
        let mut planted: BTreeMap<(usize, i64), Vec<DeviceId>> = BTreeMap::new();
        let mut planted_devices = 0;
        let mut planted_frames = 0;
        let mut noise_devices = ClassCounts::default();
        let mut noise_frames = ClassCounts::default();
        for d in &self.devices {
            let frames: usize = d.visits.iter().map(|v| self.visit_frames(v)).sum();
            match d.noise {
                Some(class) => {
                    noise_devices.bump(class, 1);
                    noise_frames.bump(class, frames);
                }
                None => {
                    planted_devices += 1;
                    planted_frames += frames;
                    let id = d.mac.anonymize();
                    for v in &d.visits {
                        planted.entry((v.stop, v.start.div_euclid(SECS_PER_DAY))).or_default().push(id);
                        let first = (v.start - origin).div_euclid(SECS_PER_MINUTE) as usize;
                        let last = (v.end() - origin).div_euclid(SECS_PER_MINUTE) as usize;
                        for m in &mut present[v.stop][first..=last] {
                            *m += 1;
                        }
                    }
                }
            }
        }
        let mut stop_order: Vec<usize> = (0..cfg.stops.len()).collect();
        stop_order.sort_by_key(|&s| &cfg.stops[s]);
        let mut hourly = Vec::with_capacity(minutes / 60 * cfg.stops.len());
        for &s in &stop_order {
            for (h, hour) in range.hours().enumerate() {
                let sum: u64 = present[s][h * 60..(h + 1) * 60].iter().map(|&c| c as u64).sum();
                hourly.push(HourlyCount {
                    stop: cfg.stops[s].clone(),
                    hour,
                    count: sum as f64 / 60.0,
                });
            }
        }
        let planted = planted
            .into_iter()
            .map(|((s, day), mut devices)| {
                devices.sort();
                PlantedSet {
                    stop: cfg.stops[s].clone(),
                    date: Timestamp(day * SECS_PER_DAY).date(),
                    devices,
                }
            })
            .collect();
        GroundTruth {
            planted,
            hourly,
            planted_devices,
            planted_frames,
            noise_devices,
            noise_frames,
            demand: cfg.demand.clone(),
        }
    }
}

/// Scenario files written by [`write_scenario`].
pub struct ScenarioFiles {
    pub frames: std::path::PathBuf,
    pub weather: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub hourly: std::path::PathBuf,
}

/// Writes `frames.csv`, `weather.json`, `truth.json` and `truth_hourly.csv` into `dir`.
pub fn write_scenario(scenario: &Scenario, dir: &std::path::Path, anonymize: bool) -> Result<ScenarioFiles> {
    std::fs::create_dir_all(dir)?;
    let files = ScenarioFiles {
        frames: dir.join("frames.csv"),
        weather: dir.join("weather.json"),
        truth: dir.join("truth.json"),
        hourly: dir.join("truth_hourly.csv"),
    };
    let create = |p: &std::path::Path| std::fs::File::create(p).map(std::io::BufWriter::new);
    let mut w = create(&files.frames)?;
    crate::ingest::write_frame_csv(&mut w, &scenario.frames(), anonymize)?;
    w.flush()?;
    let mut w = create(&files.weather)?;
    crate::weather::write_weather_json(&mut w, &scenario.weather)?;
    w.flush()?;
    let truth = scenario.truth();
    let mut w = create(&files.truth)?;
    serde_json::to_writer_pretty(&mut w, &truth)?;
    w.flush()?;
    let mut w = create(&files.hourly)?;
    crate::aggregation::write_hourly_counts_csv(&mut w, &truth.hourly)?;
    w.flush()?;
    Ok(files)
}

/// Planted linear model `y = bias + theta . x + N(0, sigma^2)` with standard
/// normal features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearScenario {
    pub seed: u64,
    pub n: usize,
    pub theta: Vec<f64>,
    pub bias: f64,
    pub sigma: f64,
}

pub fn linear_scenario(cfg: &LinearScenario) -> Result<FeatureMatrix> {
    if !(cfg.sigma.is_finite() && cfg.sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be non-negative, got {}", cfg.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.theta.len();
    let rows: Vec<Vec<f64>> = (0..cfg.n).map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let target = rows
        .iter()
        .map(|x| {
            let e: f64 = StandardNormal.sample(&mut rng);
            cfg.bias + cfg.theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + cfg.sigma * e
        })
        .collect();
    let cols = (1..=p).map(|j| ColumnMeta::numeric(format!("x{j}"))).collect();
    FeatureMatrix::from_rows(cols, &rows, target)
}
