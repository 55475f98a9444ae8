//! Frame CSV parsing, MAC address bit checks and SHA-1 anonymization.
//!
//! A frame file looks like
//!
//! ```text
//! #anonymized=true
//! bus_stop,timestamp_utc,mac,rssi_dbm
//! 017,2017-04-21 13:05:02,50dba754687068b7158369d47200933b925ea53a,-55
//! ```
//!
//! The comment line is optional. Without it each `mac` cell may hold either a
//! raw address or a 40-hex-digit digest. With `#anonymized=true` only digests
//! are accepted, with `#anonymized=false` only raw addresses. Gzip input is
//! detected from the magic bytes.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::{Digest, Sha1};

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const FRAME_HEADER: &str = "bus_stop,timestamp_utc,mac,rssi_dbm";

/// Physically plausible RSSI range accepted at parse time, in dBm.
pub const RSSI_PLAUSIBLE: (i32, i32) = (-120, 0);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    /// I/G bit: set for group (multicast/broadcast) addresses.
    pub fn is_group(&self) -> bool {
        self.0[0] & 0x01 != 0
    }

    /// U/L bit: set for locally administered addresses.
    pub fn is_local(&self) -> bool {
        self.0[0] & 0x02 != 0
    }

    /// Frames from these addresses cannot identify a device and count as noise.
    pub fn is_randomized(&self) -> bool {
        self.is_local() || self.is_group()
    }

    pub fn anonymize(&self) -> DeviceId {
        DeviceId::from_mac(self)
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = &self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddress({self})")
    }
}

impl FromStr for MacAddress {
    type Err = Error;

    /// Accepts `:` or `-` separators in either case.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad MAC address {s:?}"));
        if s.len() != 17 {
            return Err(bad());
        }
        let mut octets = [0u8; 6];
        for (i, part) in s.split([':', '-']).enumerate() {
            if i >= 6 || part.len() != 2 {
                return Err(bad());
            }
            octets[i] = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        Ok(MacAddress(octets))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-1 digest of a MAC address's canonical text form.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub [u8; 20]);

impl DeviceId {
    /// Hashes the 17-byte uppercase colon-separated text, unsalted.
    pub fn from_mac(mac: &MacAddress) -> Self {
        let digest = Sha1::digest(mac.to_string().as_bytes());
        DeviceId(digest.into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({})", &self.to_hex()[..12])
    }
}

impl FromStr for DeviceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = [0u8; 20];
        if s.len() != 40 {
            return Err(Error::Format(format!("bad device digest {s:?}")));
        }
        hex::decode_to_slice(s, &mut out)
            .map_err(|_| Error::Format(format!("bad device digest {s:?}")))?;
        Ok(DeviceId(out))
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One captured frame observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub stop: String,
    pub at: Timestamp,
    pub device: DeviceId,
    /// Raw address, present only when the input was not pre-anonymized.
    pub mac: Option<MacAddress>,
    pub rssi: i32,
}

impl FrameRecord {
    pub fn from_mac(stop: impl Into<String>, at: Timestamp, mac: MacAddress, rssi: i32) -> Self {
        FrameRecord {
            stop: stop.into(),
            at,
            device: mac.anonymize(),
            mac: Some(mac),
            rssi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct FrameParse {
    pub records: Vec<FrameRecord>,
    pub errors: Vec<RowError>,
    /// Value of the `#anonymized=` header flag, if present.
    pub anonymized_flag: Option<bool>,
}

impl FrameParse {
    /// True when no record carries a raw MAC, so randomization bits are unavailable.
    pub fn is_anonymized(&self) -> bool {
        self.anonymized_flag
            .unwrap_or_else(|| !self.records.is_empty() && self.records.iter().all(|r| r.mac.is_none()))
    }
}

/// Streams a frame CSV. Malformed rows land in `errors` with their line number.
pub fn parse_frame_csv<R: Read>(reader: R) -> Result<FrameParse> {
    let mut input = BufReader::new(reader);
    let is_gzip = input.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if is_gzip {
        parse_plain(BufReader::new(MultiGzDecoder::new(input)))
    } else {
        parse_plain(input)
    }
}

fn parse_plain<B: BufRead>(mut input: B) -> Result<FrameParse> {
    let mut out = FrameParse::default();
    let mut line = String::new();
    let mut line_no = 0u64;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Format("frame file is missing its header".into()));
        }
        line_no += 1;
        let text = line.trim_end_matches(['\r', '\n']);
        if let Some(comment) = text.strip_prefix('#') {
            for flag in comment.split([',', ' ']) {
                if let Some(v) = flag.trim().strip_prefix("anonymized=") {
                    out.anonymized_flag = Some(v.eq_ignore_ascii_case("true"));
                }
            }
            continue;
        }
        if text != FRAME_HEADER {
            return Err(Error::Format(format!(
                "line {line_no}: expected header {FRAME_HEADER:?}, found {text:?}"
            )));
        }
        break;
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut row = csv::StringRecord::new();
    loop {
        let read = rdr.read_record(&mut row);
        let line = line_no + row.position().map_or(0, |p| p.line());
        match read {
            Ok(false) => break,
            Ok(true) => match parse_row(&row, out.anonymized_flag) {
                Ok(rec) => out.records.push(rec),
                Err(message) => out.errors.push(RowError { line, message }),
            },
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, anonymized: Option<bool>) -> std::result::Result<FrameRecord, String> {
    if row.len() != 4 {
        return Err(format!("expected 4 fields, found {}", row.len()));
    }
    let stop = row[0].trim();
    if stop.is_empty() {
        return Err("empty bus_stop".into());
    }
    let at: Timestamp = row[1].trim().parse().map_err(|e: Error| e.to_string())?;
    let addr = row[2].trim();
    let (device, mac) = if addr.len() == 40 {
        if anonymized == Some(false) {
            return Err("digest in a file flagged anonymized=false".into());
        }
        (addr.parse::<DeviceId>().map_err(|e| e.to_string())?, None)
    } else {
        if anonymized == Some(true) {
            return Err("raw MAC in a file flagged anonymized=true".into());
        }
        let mac: MacAddress = addr.parse().map_err(|e: Error| e.to_string())?;
        (mac.anonymize(), Some(mac))
    };
    let rssi: i32 = row[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad rssi {:?}", &row[3]))?;
    if !(RSSI_PLAUSIBLE.0..=RSSI_PLAUSIBLE.1).contains(&rssi) {
        return Err(format!("rssi {rssi} outside plausible range [-120, 0]"));
    }
    Ok(FrameRecord {
        stop: stop.to_string(),
        at,
        device,
        mac,
        rssi,
    })
}

/// Writes records in the frame CSV layout.
///
/// With `anonymize` (or when any record lacks a raw MAC) the file is flagged
/// `#anonymized=true` and the `mac` column holds digests.
pub fn write_frame_csv<W: Write>(mut w: W, records: &[FrameRecord], anonymize: bool) -> Result<()> {
    let digests = anonymize || records.iter().any(|r| r.mac.is_none());
    if digests {
        writeln!(w, "#anonymized=true")?;
    }
    writeln!(w, "{FRAME_HEADER}")?;
    for r in records {
        match (&r.mac, digests) {
            (Some(mac), false) => writeln!(w, "{},{},{},{}", r.stop, r.at, mac, r.rssi)?,
            _ => writeln!(w, "{},{},{},{}", r.stop, r.at, r.device, r.rssi)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mac(s: &str) -> MacAddress {
        s.parse().unwrap()
    }

    #[test]
    fn randomization_bits() {
        assert!(mac("02:00:00:00:00:01").is_randomized());
        assert!(!mac("00:11:22:33:44:55").is_randomized());
        assert!(mac("01:00:5E:00:00:01").is_randomized());
        assert!(mac("01:00:5E:00:00:01").is_group());
        assert!(!mac("01:00:5E:00:00:01").is_local());
    }

    #[test]
    fn canonical_text_is_uppercase() {
        let m = mac("aa-bb-cc-dd-ee-ff");
        assert_eq!(m.to_string(), "AA:BB:CC:DD:EE:FF");
        assert_eq!(m.to_string().len(), 17);
        assert!("AA:BB:CC:DD:EE".parse::<MacAddress>().is_err());
        assert!("AA:BB:CC:DD:EE:GG".parse::<MacAddress>().is_err());
        assert!("AAB:B:CC:DD:EE:FF".parse::<MacAddress>().is_err());
    }

    #[test]
    fn anonymize_is_canonical_and_deterministic() {
        let upper = mac("AA:BB:CC:DD:EE:FF").anonymize();
        let lower = mac("aa:bb:cc:dd:ee:ff").anonymize();
        assert_eq!(upper, lower);
        assert_eq!(upper, mac("AA:BB:CC:DD:EE:FF").anonymize());
    }

    #[test]
    fn sha1_matches_reference_digests() {
        // Reference values from Python's hashlib over the 17-byte strings.
        assert_eq!(
            mac("00:00:00:00:00:00").anonymize().to_hex(),
            "85cce83032eb6bd39ddea68e0be917e4665b5d26"
        );
        assert_eq!(
            mac("AB:CD:EF:01:23:45").anonymize().to_hex(),
            "50dba754687068b7158369d47200933b925ea53a"
        );
    }

    #[test]
    fn parses_raw_row() {
        let data = "bus_stop,timestamp_utc,mac,rssi_dbm\n017,2017-04-21 13:05:02,AB:CD:EF:01:23:45,-55\n";
        let parsed = parse_frame_csv(data.as_bytes()).unwrap();
        assert!(parsed.errors.is_empty());
        let r = &parsed.records[0];
        assert_eq!(r.stop, "017");
        assert_eq!(r.rssi, -55);
        assert_eq!(r.at.to_string(), "2017-04-21 13:05:02");
        assert_eq!(r.device, mac("AB:CD:EF:01:23:45").anonymize());
        assert!(!parsed.is_anonymized());
    }

    #[test]
    fn header_only_is_empty() {
        let parsed = parse_frame_csv("bus_stop,timestamp_utc,mac,rssi_dbm\n".as_bytes()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn missing_or_wrong_header_is_fatal() {
        assert!(parse_frame_csv("".as_bytes()).is_err());
        assert!(parse_frame_csv("#anonymized=true\n".as_bytes()).is_err());
        assert!(parse_frame_csv("stop,time,mac,rssi\n".as_bytes()).is_err());
    }

    #[test]
    fn bad_rows_are_reported_with_line_numbers() {
        let data = "bus_stop,timestamp_utc,mac,rssi_dbm\n\
                    017,2017-04-21 13:05:02,AB:CD:EF:01:23:45,+5\n\
                    017,2017-04-21 13:05:03,AB:CD:EF:01:23:45,-50\n\
                    017,2017-04-21,AB:CD:EF:01:23:45,-50\n\
                    017,2017-04-21 13:05:04,nope,-50\n\
                    017,2017-04-21 13:05:04,AB:CD:EF:01:23:45\n\
                    017,2017-04-21 13:05:05,AB:CD:EF:01:23:45,-121\n";
        let parsed = parse_frame_csv(data.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let lines: Vec<u64> = parsed.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 4, 5, 6, 7]);
        assert!(parsed.errors[0].message.contains("rssi 5"));
    }

    #[test]
    fn anonymized_flag_is_enforced() {
        let digest = mac("AB:CD:EF:01:23:45").anonymize();
        let data = format!(
            "#anonymized=true\nbus_stop,timestamp_utc,mac,rssi_dbm\n017,2017-04-21 13:05:02,{digest},-55\n023,2017-04-21 13:05:02,AB:CD:EF:01:23:45,-55\n"
        );
        let parsed = parse_frame_csv(data.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].device, digest);
        assert_eq!(parsed.records[0].mac, None);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 4);
        assert!(parsed.is_anonymized());
    }

    #[test]
    fn gzip_input_is_detected() {
        use flate2::write::GzEncoder;
        let data = "bus_stop,timestamp_utc,mac,rssi_dbm\n017,2017-04-21 13:05:02,AB:CD:EF:01:23:45,-55\n";
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(data.as_bytes()).unwrap();
        let gz = enc.finish().unwrap();
        let parsed = parse_frame_csv(gz.as_slice()).unwrap();
        assert_eq!(parsed.records.len(), 1);
    }

    #[test]
    fn anonymize_is_injective_on_a_large_corpus() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for i in 0u32..200_000 {
            let b = i.to_be_bytes();
            let m = MacAddress([0x00, 0x1A, b[0], b[1], b[2], b[3]]);
            assert!(seen.insert(m.anonymize()));
        }
    }

    fn arb_record() -> impl Strategy<Value = FrameRecord> {
        (
            prop::sample::select(vec!["017", "023", "A-1"]),
            1_400_000_000i64..1_600_000_000,
            any::<[u8; 6]>(),
            -120i32..=0,
        )
            .prop_map(|(stop, at, octets, rssi)| {
                FrameRecord::from_mac(stop, Timestamp(at), MacAddress(octets), rssi)
            })
    }

    proptest! {
        #[test]
        fn randomization_depends_only_on_first_octet(a in any::<[u8; 6]>(), b in any::<[u8; 5]>()) {
            let mut other = a;
            other[1..].copy_from_slice(&b);
            prop_assert_eq!(MacAddress(a).is_randomized(), MacAddress(other).is_randomized());
        }

        #[test]
        fn write_then_parse_reproduces_rows(records in prop::collection::vec(arb_record(), 0..40), anonymize: bool) {
            let mut buf = Vec::new();
            write_frame_csv(&mut buf, &records, anonymize).unwrap();
            let parsed = parse_frame_csv(buf.as_slice()).unwrap();
            prop_assert!(parsed.errors.is_empty());
            let expected: Vec<FrameRecord> = records
                .iter()
                .cloned()
                .map(|mut r| {
                    if anonymize {
                        r.mac = None;
                    }
                    r
                })
                .collect();
            prop_assert_eq!(parsed.records, expected);
        }
    }
}
