//! Noise removal: turns raw frames into kept dwell segments.
//!
//! [`clean`] runs the stages in a fixed order:
//!
//! 1. drop frames whose MAC is randomized or a group address,
//! 2. drop devices seen at only one stop within the window (passers-by,
//!    building PCs),
//! 3. drop frames outside the RSSI range,
//! 4. cut each (stop, device) frame run into segments at gaps longer than
//!    `gap_s`,
//! 5. drop segments shorter than `d_min_s` or longer than `d_max_s`.
//!
//! A rider whose phone battery dies on the bus is seen at one stop only and is
//! dropped with the passers-by. No special handling is attempted.
//!
//! Every input frame is counted once in [`CleaningReport`], under the first
//! stage that drops it.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DeviceId, FrameRecord};
use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiStopWindow {
    /// A device must reach two stops within one UTC calendar day.
    PerDay,
    WholeDataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    /// Shortest kept dwell, seconds.
    pub d_min_s: i64,
    /// Longest kept dwell, seconds.
    pub d_max_s: i64,
    /// Inter-frame gap above which a new segment starts, seconds.
    pub gap_s: i64,
    pub rssi_lo: i32,
    pub rssi_hi: i32,
    pub multi_stop_window: MultiStopWindow,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            d_min_s: 2 * 60,
            d_max_s: 30 * 60,
            gap_s: 5 * 60,
            rssi_lo: -80,
            rssi_hi: -30,
            multi_stop_window: MultiStopWindow::PerDay,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.d_min_s && self.d_min_s < self.d_max_s) {
            return Err(Error::Config(format!(
                "need 0 < d_min_s < d_max_s, got {} and {}",
                self.d_min_s, self.d_max_s
            )));
        }
        if self.rssi_lo >= self.rssi_hi {
            return Err(Error::Config(format!(
                "need rssi_lo < rssi_hi, got {} and {}",
                self.rssi_lo, self.rssi_hi
            )));
        }
        if self.gap_s <= 0 {
            return Err(Error::Config(format!("gap_s must be positive, got {}", self.gap_s)));
        }
        Ok(())
    }

    fn window_of(&self, at: Timestamp) -> i64 {
        match self.multi_stop_window {
            MultiStopWindow::PerDay => at.day_index(),
            MultiStopWindow::WholeDataset => 0,
        }
    }
}

/// A contiguous dwell of one device at one stop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "bus_stop")]
    pub stop: String,
    pub device: DeviceId,
    #[serde(rename = "start_utc")]
    pub start: Timestamp,
    #[serde(rename = "end_utc")]
    pub end: Timestamp,
    pub frame_count: usize,
    pub mean_rssi: f64,
}

impl Segment {
    pub fn duration_s(&self) -> i64 {
        self.end.0 - self.start.0
    }
}

/// Frame counts per cleaning outcome.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_frames: usize,
    pub dropped_randomized: usize,
    pub dropped_single_stop: usize,
    pub dropped_rssi: usize,
    pub dropped_short: usize,
    pub dropped_long: usize,
    pub kept_frames: usize,
    pub kept_segments: usize,
    /// Set when some frames carried only a digest, so the randomization check
    /// could not run on them.
    pub randomized_check_skipped: bool,
}

impl CleaningReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped_randomized
            + self.dropped_single_stop
            + self.dropped_rssi
            + self.dropped_short
            + self.dropped_long
    }

    pub fn is_balanced(&self) -> bool {
        self.input_frames == self.kept_frames + self.dropped_total()
    }
}

/// Keeps frames with `rssi_lo <= rssi <= rssi_hi`, preserving order.
pub fn filter_rssi(mut frames: Vec<FrameRecord>, cfg: &CleaningConfig) -> Vec<FrameRecord> {
    frames.retain(|f| (cfg.rssi_lo..=cfg.rssi_hi).contains(&f.rssi));
    frames
}

/// Drops frames from randomized or group MACs.
///
/// Frames without a raw MAC pass through; the flag reports whether any did.
pub fn filter_randomized(mut frames: Vec<FrameRecord>) -> (Vec<FrameRecord>, bool) {
    let skipped = frames.iter().any(|f| f.mac.is_none());
    frames.retain(|f| !f.mac.is_some_and(|m| m.is_randomized()));
    (frames, skipped)
}

/// Keeps a device's frames only within windows where it was seen at two or
/// more distinct stops.
pub fn filter_single_stop(mut frames: Vec<FrameRecord>, cfg: &CleaningConfig) -> Vec<FrameRecord> {
    enum Seen<'a> {
        One(&'a str),
        Many,
    }
    let multi: HashSet<(DeviceId, i64)> = {
        let mut seen: HashMap<(DeviceId, i64), Seen<'_>> = HashMap::new();
        for f in &frames {
            let key = (f.device, cfg.window_of(f.at));
            match seen.entry(key) {
                Entry::Vacant(v) => {
                    v.insert(Seen::One(&f.stop));
                }
                Entry::Occupied(mut o) => {
                    if matches!(o.get(), Seen::One(stop) if *stop != f.stop) {
                        o.insert(Seen::Many);
                    }
                }
            }
        }
        seen.into_iter()
            .filter_map(|(k, v)| matches!(v, Seen::Many).then_some(k))
            .collect()
    };
    frames.retain(|f| multi.contains(&(f.device, cfg.window_of(f.at))));
    frames
}

fn sort_for_segmentation(frames: &mut [FrameRecord]) {
    frames.sort_by(|a, b| {
        (&a.stop, &a.device, a.at, a.rssi).cmp(&(&b.stop, &b.device, b.at, b.rssi))
    });
}

/// Splits sorted frames into segments, returning each segment with the index
/// range of its member frames.
fn segment_sorted(frames: &[FrameRecord], cfg: &CleaningConfig) -> Vec<(Segment, Range<usize>)> {
    let mut partitions = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        if i == frames.len()
            || frames[i].stop != frames[start].stop
            || frames[i].device != frames[start].device
        {
            partitions.push(start..i);
            start = i;
        }
    }
    if frames.is_empty() {
        partitions.clear();
    }

    let mut segments: Vec<(Segment, Range<usize>)> = partitions
        .into_par_iter()
        .flat_map_iter(|part| {
            let mut out = Vec::new();
            let mut run_start = part.start;
            for i in part.start + 1..=part.end {
                if i == part.end || frames[i].at.0 - frames[i - 1].at.0 > cfg.gap_s {
                    out.push((make_segment(&frames[run_start..i]), run_start..i));
                    run_start = i;
                }
            }
            out
        })
        .collect();
    segments.sort_by(|(a, _), (b, _)| (&a.stop, a.start, &a.device).cmp(&(&b.stop, b.start, &b.device)));
    segments
}

fn make_segment(run: &[FrameRecord]) -> Segment {
    let first = &run[0];
    let rssi_sum: i64 = run.iter().map(|f| f.rssi as i64).sum();
    Segment {
        stop: first.stop.clone(),
        device: first.device,
        start: first.at,
        end: run[run.len() - 1].at,
        frame_count: run.len(),
        mean_rssi: rssi_sum as f64 / run.len() as f64,
    }
}

/// Gap-based segmentation. Every frame ends up in exactly one segment.
/// Output is sorted by (stop, start, device).
pub fn segment(frames: &[FrameRecord], cfg: &CleaningConfig) -> Vec<Segment> {
    let mut sorted = frames.to_vec();
    sort_for_segmentation(&mut sorted);
    segment_sorted(&sorted, cfg)
        .into_iter()
        .map(|(s, _)| s)
        .collect()
}

#[derive(Debug, Default)]
pub struct DurationSplit {
    pub kept: Vec<Segment>,
    pub short: Vec<Segment>,
    pub long: Vec<Segment>,
}

/// Partitions segments by dwell duration against `[d_min_s, d_max_s]`.
pub fn filter_duration(segments: Vec<Segment>, cfg: &CleaningConfig) -> DurationSplit {
    let mut split = DurationSplit::default();
    for s in segments {
        let d = s.duration_s();
        if d < cfg.d_min_s {
            split.short.push(s);
        } else if d > cfg.d_max_s {
            split.long.push(s);
        } else {
            split.kept.push(s);
        }
    }
    split
}

#[derive(Debug)]
pub struct Cleaned {
    pub segments: Vec<Segment>,
    pub report: CleaningReport,
    /// Frames belonging to kept segments, sorted by (stop, device, time).
    pub kept_frames: Vec<FrameRecord>,
}

/// Runs the full pipeline and returns kept segments with the drop report.
pub fn clean(frames: Vec<FrameRecord>, cfg: &CleaningConfig) -> (Vec<Segment>, CleaningReport) {
    let c = clean_detailed(frames, cfg);
    (c.segments, c.report)
}

pub fn clean_detailed(frames: Vec<FrameRecord>, cfg: &CleaningConfig) -> Cleaned {
    let mut report = CleaningReport {
        input_frames: frames.len(),
        ..Default::default()
    };

    let (frames, skipped) = filter_randomized(frames);
    report.randomized_check_skipped = skipped;
    report.dropped_randomized = report.input_frames - frames.len();

    let before = frames.len();
    let frames = filter_single_stop(frames, cfg);
    report.dropped_single_stop = before - frames.len();

    let before = frames.len();
    let mut frames = filter_rssi(frames, cfg);
    report.dropped_rssi = before - frames.len();

    sort_for_segmentation(&mut frames);
    let mut kept = Vec::new();
    let mut kept_ranges = Vec::new();
    for (seg, range) in segment_sorted(&frames, cfg) {
        let d = seg.duration_s();
        if d < cfg.d_min_s {
            report.dropped_short += seg.frame_count;
        } else if d > cfg.d_max_s {
            report.dropped_long += seg.frame_count;
        } else {
            report.kept_frames += seg.frame_count;
            kept.push(seg);
            kept_ranges.push(range);
        }
    }
    report.kept_segments = kept.len();

    kept_ranges.sort_by_key(|r| r.start);
    let kept_frames = kept_ranges
        .into_iter()
        .flat_map(|r| frames[r].iter().cloned())
        .collect();

    debug_assert!(report.is_balanced());
    Cleaned {
        segments: kept,
        report,
        kept_frames,
    }
}

pub fn write_segments_csv<W: Write>(w: W, segments: &[Segment]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if segments.is_empty() {
        wtr.write_record(["bus_stop", "device", "start_utc", "end_utc", "frame_count", "mean_rssi"])?;
    }
    for s in segments {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_segments_csv<R: Read>(r: R) -> Result<Vec<Segment>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>()
        != ["bus_stop", "device", "start_utc", "end_utc", "frame_count", "mean_rssi"]
    {
        return Err(Error::Format(format!("unexpected segments header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MacAddress;
    use proptest::prelude::*;

    const T0: i64 = 1_492_779_600; // 2017-04-21 13:00:00

    fn frame(stop: &str, mac_tail: u8, at: i64, rssi: i32) -> FrameRecord {
        FrameRecord::from_mac(stop, Timestamp(at), MacAddress([0x00, 0x11, 0, 0, 0, mac_tail]), rssi)
    }

    fn minutes(stop: &str, mac_tail: u8, mins: &[i64]) -> Vec<FrameRecord> {
        mins.iter().map(|m| frame(stop, mac_tail, T0 + m * 60, -55)).collect()
    }

    #[test]
    fn config_validation() {
        assert!(CleaningConfig::default().validate().is_ok());
        let bad = [
            CleaningConfig { d_min_s: 0, ..Default::default() },
            CleaningConfig { d_min_s: 1800, ..Default::default() },
            CleaningConfig { rssi_lo: -30, ..Default::default() },
            CleaningConfig { gap_s: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn rssi_bounds_are_inclusive() {
        let cfg = CleaningConfig::default();
        let frames = vec![
            frame("017", 1, T0, -55),
            frame("017", 1, T0 + 1, -85),
            frame("017", 1, T0 + 2, -80),
            frame("017", 1, T0 + 3, -30),
            frame("017", 1, T0 + 4, -29),
        ];
        let kept: Vec<i32> = filter_rssi(frames, &cfg).iter().map(|f| f.rssi).collect();
        assert_eq!(kept, vec![-55, -80, -30]);
    }

    #[test]
    fn randomized_frames_are_dropped() {
        let local = FrameRecord::from_mac("017", Timestamp(T0), MacAddress([0x02, 0xAA, 0, 0, 0, 1]), -50);
        let global = FrameRecord::from_mac("017", Timestamp(T0), MacAddress([0x00, 0x11, 0, 0, 0, 1]), -50);
        let (kept, skipped) = filter_randomized(vec![local.clone(), global.clone()]);
        assert_eq!(kept, vec![global]);
        assert!(!skipped);

        let (cleaned, report) = clean(vec![local.clone(), local], &CleaningConfig::default());
        assert!(cleaned.is_empty());
        assert_eq!(report.dropped_randomized, report.input_frames);
    }

    #[test]
    fn digest_only_frames_skip_the_randomization_check() {
        let mut f = frame("017", 1, T0, -50);
        f.mac = None;
        let (kept, skipped) = filter_randomized(vec![f]);
        assert_eq!(kept.len(), 1);
        assert!(skipped);
    }

    #[test]
    fn single_stop_filter() {
        let cfg = CleaningConfig::default();
        // Device 1 at two stops the same day, device 2 at one stop only.
        let frames = vec![
            frame("017", 1, T0, -50),
            frame("023", 1, T0 + 3600, -50),
            frame("017", 2, T0, -50),
            frame("017", 2, T0 + 7200, -50),
        ];
        let kept = filter_single_stop(frames, &cfg);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|f| f.mac.unwrap().0[5] == 1));
    }

    #[test]
    fn single_stop_window_is_per_day() {
        // Stop 017 on day 1 only, stop 023 on day 2 only.
        let frames = vec![
            frame("017", 1, T0, -50),
            frame("017", 1, T0 + 60, -50),
            frame("023", 1, T0 + 86_400, -50),
            frame("023", 1, T0 + 86_460, -50),
        ];
        let per_day = filter_single_stop(frames.clone(), &CleaningConfig::default());
        assert!(per_day.is_empty());
        let whole = CleaningConfig {
            multi_stop_window: MultiStopWindow::WholeDataset,
            ..Default::default()
        };
        assert_eq!(filter_single_stop(frames, &whole).len(), 4);
    }

    #[test]
    fn segmentation_splits_on_gaps() {
        let cfg = CleaningConfig::default();
        let one = segment(&minutes("017", 1, &[0, 1, 3, 4]), &cfg);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start.0, one[0].end.0), (T0, T0 + 240));
        assert_eq!(one[0].frame_count, 4);

        let two = segment(&minutes("017", 1, &[0, 1, 10, 11]), &cfg);
        assert_eq!(two.len(), 2);
        assert_eq!((two[0].start.0, two[0].end.0), (T0, T0 + 60));
        assert_eq!((two[1].start.0, two[1].end.0), (T0 + 600, T0 + 660));

        let single = segment(&minutes("017", 1, &[7]), &cfg);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].duration_s(), 0);
    }

    #[test]
    fn gap_equal_to_threshold_does_not_split() {
        let cfg = CleaningConfig::default();
        assert_eq!(segment(&minutes("017", 1, &[0, 5]), &cfg).len(), 1);
        assert_eq!(segment(&minutes("017", 1, &[0, 6]), &cfg).len(), 2);
    }

    #[test]
    fn duration_filter() {
        let cfg = CleaningConfig::default();
        let segs = [
            segment(&minutes("017", 1, &[0, 1, 2, 3, 4, 5]), &cfg),
            segment(&minutes("017", 2, &[0]), &cfg),
            segment(&minutes("017", 3, &(0..=45).collect::<Vec<_>>()), &cfg),
        ]
        .concat();
        let split = filter_duration(segs, &cfg);
        assert_eq!(split.kept.len(), 1);
        assert_eq!(split.kept[0].duration_s(), 300);
        assert_eq!(split.short.len(), 1);
        assert_eq!(split.long.len(), 1);
        assert_eq!(split.long[0].duration_s(), 45 * 60);
    }

    #[test]
    fn empty_input() {
        let (segs, report) = clean(Vec::new(), &CleaningConfig::default());
        assert!(segs.is_empty());
        assert_eq!(report, CleaningReport::default());
    }

    #[test]
    fn segments_csv_roundtrip() {
        let cfg = CleaningConfig::default();
        let segs = segment(&[minutes("017", 1, &[0, 1, 3]), minutes("023", 2, &[5, 9])].concat(), &cfg);
        let mut buf = Vec::new();
        write_segments_csv(&mut buf, &segs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("bus_stop,device,start_utc,end_utc,frame_count,mean_rssi\n"));
        assert_eq!(read_segments_csv(buf.as_slice()).unwrap(), segs);

        let mut empty = Vec::new();
        write_segments_csv(&mut empty, &[]).unwrap();
        assert!(read_segments_csv(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn parallel_segmentation_matches_single_thread() {
        let cfg = CleaningConfig::default();
        let mut frames = Vec::new();
        for dev in 0..60u8 {
            for k in 0..40i64 {
                frames.push(frame(["017", "023", "031"][dev as usize % 3], dev, T0 + k * 97 * (dev as i64 % 5 + 1), -50));
            }
        }
        let parallel = segment(&frames, &cfg);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| segment(&frames, &cfg));
        assert_eq!(parallel, serial);
    }

    // Random frames over a few stops, devices and RSSI levels.
    fn arb_frames() -> impl Strategy<Value = Vec<FrameRecord>> {
        prop::collection::vec(
            (0usize..3, 0u8..12, 0i64..(2 * 86_400), -100i32..=-10),
            0..250,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(stop, dev, offset, rssi)| {
                    let first = if dev % 4 == 0 { 0x02 } else { 0x00 };
                    FrameRecord::from_mac(
                        ["017", "023", "031"][stop],
                        Timestamp(T0 + offset - offset % 37),
                        MacAddress([first, 0x11, 0, 0, 0, dev]),
                        rssi,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn report_accounts_for_every_frame(frames in arb_frames()) {
            let cfg = CleaningConfig::default();
            let c = clean_detailed(frames.clone(), &cfg);
            prop_assert!(c.report.is_balanced());
            prop_assert_eq!(c.report.kept_frames, c.kept_frames.len());
            for s in &c.segments {
                prop_assert!((cfg.d_min_s..=cfg.d_max_s).contains(&s.duration_s()));
            }
            for f in &c.kept_frames {
                prop_assert!((cfg.rssi_lo..=cfg.rssi_hi).contains(&f.rssi));
                prop_assert!(frames.contains(f));
            }
        }

        #[test]
        fn output_is_independent_of_input_order(frames in arb_frames(), seed: u64) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cfg = CleaningConfig::default();
            let mut shuffled = frames.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(clean(frames, &cfg), clean(shuffled, &cfg));
        }

        #[test]
        fn reclean_never_grows(frames in arb_frames()) {
            let cfg = CleaningConfig::default();
            let first = clean_detailed(frames, &cfg);
            let (again, _) = clean(first.kept_frames.clone(), &cfg);
            for s in &again {
                prop_assert!(first.segments.contains(s));
            }
        }

        #[test]
        fn randomized_filter_commutes_with_the_others(frames in arb_frames()) {
            let cfg = CleaningConfig::default();
            let (a, _) = filter_randomized(filter_rssi(filter_single_stop(frames.clone(), &cfg), &cfg));
            let (b, _) = filter_randomized(frames);
            let b = filter_rssi(filter_single_stop(b, &cfg), &cfg);
            let mut a = a;
            let mut b = b;
            sort_for_segmentation(&mut a);
            sort_for_segmentation(&mut b);
            prop_assert_eq!(a, b);
        }
    }
}
