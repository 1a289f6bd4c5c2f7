//! Dataset dialects mapped onto canonical trip records.
//!
//! | dialect          | timestamps                      | pickup columns                                        |
//! |------------------|---------------------------------|-------------------------------------------------------|
//! | `nyc_yellow`     | `YYYY-MM-DD HH:MM:SS`, local    | `pickup_latitude`, `pickup_longitude`                 |
//! | `chicago`        | `MM/DD/YYYY hh:mm:ss AM`, local | `Pickup Centroid Latitude`, `Pickup Centroid Longitude` |
//! | `sf_cabspotting` | unix seconds                    | `lat lon occupancy time` per line, one cab per file   |
//! | `canonical_csv`  | RFC 3339                        | positional, see [`CANONICAL_HEADER`]                  |
//!
//! Columns of the CSV dialects are looked up by header name, ignoring case.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use demandgraph_core::geo::LatLon;
use demandgraph_core::trip::TripRecord;
use demandgraph_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const CANONICAL_HEADER: [&str; 6] = ["pickup_time", "pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon", "dropoff_time"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    NycYellow,
    Chicago,
    SfCabspotting,
    CanonicalCsv,
}

impl Dialect {
    pub fn name(self) -> &'static str {
        match self {
            Dialect::NycYellow => "nyc_yellow",
            Dialect::Chicago => "chicago",
            Dialect::SfCabspotting => "sf_cabspotting",
            Dialect::CanonicalCsv => "canonical_csv",
        }
    }

    /// UTC offset in minutes of the local timestamps a dialect carries.
    pub fn default_utc_offset_min(self) -> i32 {
        match self {
            Dialect::NycYellow => -300,
            Dialect::Chicago => -360,
            Dialect::SfCabspotting | Dialect::CanonicalCsv => 0,
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dialect {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, CoreError> {
        match s {
            "nyc_yellow" => Ok(Dialect::NycYellow),
            "chicago" => Ok(Dialect::Chicago),
            "sf_cabspotting" => Ok(Dialect::SfCabspotting),
            "canonical_csv" => Ok(Dialect::CanonicalCsv),
            other => Err(CoreError::Config(format!("unknown dialect `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dialect: Dialect,
    /// Data rows seen, excluding headers and blank lines.
    pub rows: usize,
    pub parsed: usize,
    pub malformed: usize,
    /// Trips kept after polygon clipping, when a polygon was applied.
    pub retained: Option<usize>,
    pub dropped: Option<usize>,
}

impl IngestReport {
    fn new(dialect: Dialect) -> Self {
        Self { dialect, rows: 0, parsed: 0, malformed: 0, retained: None, dropped: None }
    }

    /// Fails when more than half the rows were malformed.
    pub fn check_quality(&self) -> Result<(), CoreError> {
        if self.rows > 0 && 2 * self.malformed > self.rows {
            return Err(CoreError::DataQuality { total: self.rows, malformed: self.malformed });
        }
        Ok(())
    }
}

/// Parses every record of `source`; malformed rows are counted and skipped.
pub fn parse_trip_records<R: Read>(source: R, dialect: Dialect, utc_offset_min: i32) -> Result<(Vec<TripRecord>, IngestReport)> {
    let (trips, report) = match dialect {
        Dialect::NycYellow => parse_named_csv(source, dialect, &NYC_COLUMNS, "%Y-%m-%d %H:%M:%S", utc_offset_min)?,
        Dialect::Chicago => parse_named_csv(source, dialect, &CHICAGO_COLUMNS, "%m/%d/%Y %I:%M:%S %p", utc_offset_min)?,
        Dialect::CanonicalCsv => parse_canonical(source)?,
        Dialect::SfCabspotting => parse_cabspotting(source)?,
    };
    report.check_quality()?;
    Ok((trips, report))
}

pub fn parse_trip_file(path: &Path, dialect: Dialect, utc_offset_min: i32) -> Result<(Vec<TripRecord>, IngestReport)> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    parse_trip_records(BufReader::new(file), dialect, utc_offset_min).map_err(|e| match e {
        AppError::Corrupt { detail, .. } => AppError::corrupt(path, detail),
        other => other,
    })
}

/// Accepted header names per field, first match wins.
struct Columns {
    pickup_time: &'static [&'static str],
    pickup_lat: &'static [&'static str],
    pickup_lon: &'static [&'static str],
    dropoff_lat: &'static [&'static str],
    dropoff_lon: &'static [&'static str],
    dropoff_time: &'static [&'static str],
}

const NYC_COLUMNS: Columns = Columns {
    pickup_time: &["tpep_pickup_datetime", "pickup_datetime"],
    pickup_lat: &["pickup_latitude"],
    pickup_lon: &["pickup_longitude"],
    dropoff_lat: &["dropoff_latitude"],
    dropoff_lon: &["dropoff_longitude"],
    dropoff_time: &["tpep_dropoff_datetime", "dropoff_datetime"],
};

const CHICAGO_COLUMNS: Columns = Columns {
    pickup_time: &["trip start timestamp", "trip_start_timestamp"],
    pickup_lat: &["pickup centroid latitude", "pickup_centroid_latitude"],
    pickup_lon: &["pickup centroid longitude", "pickup_centroid_longitude"],
    dropoff_lat: &["dropoff centroid latitude", "dropoff_centroid_latitude"],
    dropoff_lon: &["dropoff centroid longitude", "dropoff_centroid_longitude"],
    dropoff_time: &["trip end timestamp", "trip_end_timestamp"],
};

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_local(value: &str, format: &str, utc_offset_min: i32) -> Option<i64> {
    let local = NaiveDateTime::parse_from_str(value.trim(), format).ok()?;
    Some(local.and_utc().timestamp() - i64::from(utc_offset_min) * 60)
}

fn parse_coord(value: Option<&str>) -> Option<Option<f64>> {
    match value.map(str::trim) {
        None | Some("") => Some(None),
        Some(v) => v.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some),
    }
}

/// Builds a record from optional parts; `None` means malformed.
fn assemble(pickup_time: Option<i64>, plat: Option<Option<f64>>, plon: Option<Option<f64>>, dlat: Option<Option<f64>>, dlon: Option<Option<f64>>, dtime: Option<Option<i64>>) -> Option<TripRecord> {
    let pickup = LatLon::new(plat??, plon??);
    let dropoff = match (dlat?, dlon?) {
        (Some(lat), Some(lon)) => Some(LatLon::new(lat, lon)),
        (None, None) => None,
        _ => return None,
    };
    let trip = TripRecord { pickup_time: pickup_time?, pickup, dropoff, dropoff_time: dtime? };
    trip.is_valid().then_some(trip)
}

fn csv_reader<R: Read>(source: R, has_headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(has_headers).flexible(true).trim(csv::Trim::All).from_reader(source)
}

fn parse_named_csv<R: Read>(source: R, dialect: Dialect, columns: &Columns, format: &str, utc_offset_min: i32) -> Result<(Vec<TripRecord>, IngestReport)> {
    let mut reader = csv_reader(source, true);
    let headers = reader.headers().map_err(|e| AppError::corrupt("<input>", e))?.clone();
    let required = |names: &[&str]| {
        find_column(&headers, names).ok_or_else(|| AppError::corrupt("<input>", format!("{dialect} input lacks a `{}` column", names[0])))
    };
    let pt = required(columns.pickup_time)?;
    let plat = required(columns.pickup_lat)?;
    let plon = required(columns.pickup_lon)?;
    let dlat = find_column(&headers, columns.dropoff_lat);
    let dlon = find_column(&headers, columns.dropoff_lon);
    let dt = find_column(&headers, columns.dropoff_time);
    let mut report = IngestReport::new(dialect);
    let mut trips = Vec::new();
    for row in reader.records() {
        report.rows += 1;
        let Ok(row) = row else {
            report.malformed += 1;
            continue;
        };
        let field = |i: Option<usize>| i.and_then(|i| row.get(i));
        let dropoff_time = match field(dt).map(str::trim) {
            None | Some("") => Some(None),
            Some(v) => parse_local(v, format, utc_offset_min).map(Some),
        };
        let trip = assemble(
            row.get(pt).and_then(|v| parse_local(v, format, utc_offset_min)),
            parse_coord(row.get(plat)),
            parse_coord(row.get(plon)),
            parse_coord(field(dlat)),
            parse_coord(field(dlon)),
            dropoff_time,
        );
        match trip {
            Some(t) => {
                report.parsed += 1;
                trips.push(t);
            }
            None => report.malformed += 1,
        }
    }
    Ok((trips, report))
}

fn parse_rfc3339(value: &str) -> Option<i64> {
    DateTime::parse_from_rfc3339(value.trim()).ok().map(|t| t.timestamp())
}

fn parse_canonical<R: Read>(source: R) -> Result<(Vec<TripRecord>, IngestReport)> {
    let mut reader = csv_reader(source, false);
    let mut report = IngestReport::new(Dialect::CanonicalCsv);
    let mut trips = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let Ok(row) = row else {
            report.rows += 1;
            report.malformed += 1;
            continue;
        };
        if i == 0 && row.get(0).is_some_and(|f| f.eq_ignore_ascii_case(CANONICAL_HEADER[0])) {
            continue;
        }
        report.rows += 1;
        let opt_time = |v: Option<&str>| match v.map(str::trim) {
            None | Some("") => Some(None),
            Some(v) => parse_rfc3339(v).map(Some),
        };
        let trip = if row.len() == 3 || row.len() == 6 {
            assemble(
                row.get(0).and_then(parse_rfc3339),
                parse_coord(row.get(1)),
                parse_coord(row.get(2)),
                parse_coord(row.get(3)),
                parse_coord(row.get(4)),
                opt_time(row.get(5)),
            )
        } else {
            None
        };
        match trip {
            Some(t) => {
                report.parsed += 1;
                trips.push(t);
            }
            None => report.malformed += 1,
        }
    }
    Ok((trips, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Fix {
    lat: f64,
    lon: f64,
    occupied: bool,
    time: i64,
}

fn parse_fix(line: &str) -> Option<Fix> {
    let mut parts = line.split_whitespace();
    let lat = parts.next()?.parse::<f64>().ok()?;
    let lon = parts.next()?.parse::<f64>().ok()?;
    let occupied = match parts.next()? {
        "0" => false,
        "1" => true,
        _ => return None,
    };
    let time = parts.next()?.parse::<i64>().ok()?;
    if parts.next().is_some() || !LatLon::new(lat, lon).is_valid() {
        return None;
    }
    Some(Fix { lat, lon, occupied, time })
}

/// One cab trace. A trip starts at the first occupied fix after a vacant
/// one and ends at the next vacant fix; traces are re-sorted by time since
/// the published files list fixes newest first.
fn parse_cabspotting<R: Read>(source: R) -> Result<(Vec<TripRecord>, IngestReport)> {
    let mut report = IngestReport::new(Dialect::SfCabspotting);
    let mut fixes = Vec::new();
    for line in BufReader::new(source).lines() {
        let line = line.map_err(|e| AppError::corrupt("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows += 1;
        match parse_fix(&line) {
            Some(f) => fixes.push(f),
            None => report.malformed += 1,
        }
    }
    fixes.sort_by_key(|f| f.time);
    let mut trips = Vec::new();
    let mut open: Option<Fix> = None;
    let mut previous_vacant = false;
    for fix in fixes {
        match (fix.occupied, open) {
            (true, None) if previous_vacant => open = Some(fix),
            (false, Some(start)) => {
                trips.push(TripRecord {
                    pickup_time: start.time,
                    pickup: LatLon::new(start.lat, start.lon),
                    dropoff: Some(LatLon::new(fix.lat, fix.lon)),
                    dropoff_time: Some(fix.time),
                });
                open = None;
            }
            _ => {}
        }
        previous_vacant = !fix.occupied;
    }
    // a ride still open at the end of the trace has a pickup but no dropoff
    if let Some(start) = open {
        trips.push(TripRecord::pickup_only(start.time, start.lat, start.lon));
    }
    report.parsed = report.rows - report.malformed;
    Ok((trips, report))
}

pub fn format_timestamp(ts: i64) -> String {
    match DateTime::from_timestamp(ts, 0) {
        Some(t) => t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => ts.to_string(),
    }
}

/// Canonical CSV fields of one record; floats use shortest round-trip form.
pub fn canonical_fields(trip: &TripRecord) -> [String; 6] {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    [
        format_timestamp(trip.pickup_time),
        trip.pickup.lat.to_string(),
        trip.pickup.lon.to_string(),
        opt(trip.dropoff.map(|d| d.lat)),
        opt(trip.dropoff.map(|d| d.lon)),
        trip.dropoff_time.map(format_timestamp).unwrap_or_default(),
    ]
}

pub fn write_canonical_csv<W: Write>(out: W, trips: &[TripRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let io = |e: csv::Error| AppError::corrupt("<output>", e);
    writer.write_record(CANONICAL_HEADER).map_err(io)?;
    for t in trips {
        writer.write_record(canonical_fields(t)).map_err(io)?;
    }
    writer.flush().map_err(|e| AppError::io("<output>", e))
}

pub fn write_canonical_file(path: &Path, trips: &[TripRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    write_canonical_csv(std::io::BufWriter::new(file), trips)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_row_parses_to_its_fields() {
        let row = "2016-01-01T00:05:00Z,40.7580,-73.9855,40.7614,-73.9776,2016-01-01T00:15:00Z\n";
        let (trips, report) = parse_trip_records(row.as_bytes(), Dialect::CanonicalCsv, 0).unwrap();
        assert_eq!(report.parsed, 1);
        let t = trips[0];
        assert_eq!(t.pickup_time, 1_451_606_700);
        assert_eq!((t.pickup.lat, t.pickup.lon), (40.7580, -73.9855));
        assert_eq!(t.dropoff, Some(LatLon::new(40.7614, -73.9776)));
        assert_eq!(t.dropoff_time, Some(1_451_607_300));
    }

    #[test]
    fn out_of_range_latitude_is_counted_as_malformed() {
        let rows = "2016-01-01T00:05:00Z,91.0,-73.9855,,,\n2016-01-01T00:05:00Z,40.0,-73.9855,,,\n";
        let (trips, report) = parse_trip_records(rows.as_bytes(), Dialect::CanonicalCsv, 0).unwrap();
        assert_eq!((trips.len(), report.malformed, report.rows), (1, 1, 2));
        assert_eq!(trips[0].dropoff, None);
    }

    #[test]
    fn mostly_malformed_input_is_a_data_quality_error() {
        let rows = "garbage\nmore,garbage\n2016-01-01T00:05:00Z,40.0,-73.9,,,\n";
        let err = parse_trip_records(rows.as_bytes(), Dialect::CanonicalCsv, 0).unwrap_err();
        assert!(matches!(err, AppError::Core(CoreError::DataQuality { total: 3, malformed: 2 })));
    }

    #[test]
    fn unknown_dialect_is_a_config_error() {
        assert!(matches!("nyc_green".parse::<Dialect>(), Err(CoreError::Config(_))));
        for d in [Dialect::NycYellow, Dialect::Chicago, Dialect::SfCabspotting, Dialect::CanonicalCsv] {
            assert_eq!(d.name().parse::<Dialect>().unwrap(), d);
        }
    }

    #[test]
    fn nyc_local_time_is_shifted_to_utc() {
        let csv = "VendorID,tpep_pickup_datetime,tpep_dropoff_datetime,passenger_count,trip_distance,pickup_longitude,pickup_latitude,RatecodeID,store_and_fwd_flag,dropoff_longitude,dropoff_latitude\n\
                   2,2016-01-01 00:00:00,2016-01-01 00:10:00,1,1.1,-73.99,40.73,1,N,-73.98,40.75\n";
        let (trips, _) = parse_trip_records(csv.as_bytes(), Dialect::NycYellow, -300).unwrap();
        // midnight in New York (UTC-5) is 05:00 UTC
        assert_eq!(trips[0].pickup_time, 1_451_624_400);
        assert_eq!(trips[0].dropoff_time, Some(1_451_625_000));
        assert_eq!(trips[0].pickup, LatLon::new(40.73, -73.99));
    }

    #[test]
    fn chicago_twelve_hour_clock() {
        let csv = "Trip ID,Trip Start Timestamp,Trip End Timestamp,Pickup Centroid Latitude,Pickup Centroid Longitude,Dropoff Centroid Latitude,Dropoff Centroid Longitude\n\
                   a,01/01/2016 01:15:00 PM,01/01/2016 01:30:00 PM,41.88,-87.63,,\n\
                   b,01/01/2016 01:15:00 PM,01/01/2016 01:30:00 PM,,,41.9,-87.6\n";
        let (trips, report) = parse_trip_records(csv.as_bytes(), Dialect::Chicago, -360).unwrap();
        assert_eq!((report.parsed, report.malformed), (1, 1));
        assert_eq!(trips[0].pickup_time, 1_451_675_700);
        assert_eq!(trips[0].dropoff, None);
    }

    #[test]
    fn cabspotting_trips_follow_occupancy_transitions() {
        // newest first, as in the published traces
        let trace = "37.760 -122.400 0 1060\n37.755 -122.398 1 1050\n37.751 -122.395 1 1040\n37.75134 -122.39488 0 1030\n37.7 -122.3 1 1000\n";
        let (trips, report) = parse_trip_records(trace.as_bytes(), Dialect::SfCabspotting, 0).unwrap();
        assert_eq!((report.rows, report.parsed), (5, 5));
        // the leading occupied fix has no observed pickup
        assert_eq!(trips.len(), 1);
        assert_eq!(trips[0].pickup_time, 1040);
        assert_eq!(trips[0].pickup, LatLon::new(37.751, -122.395));
        assert_eq!(trips[0].dropoff, Some(LatLon::new(37.760, -122.400)));
        assert_eq!(trips[0].dropoff_time, Some(1060));
    }

    #[test]
    fn cabspotting_open_ride_keeps_pickup_only() {
        let trace = "37.75134 -122.39488 0 1213084687\n37.751 -122.395 1 1213084747\n";
        let (trips, _) = parse_trip_records(trace.as_bytes(), Dialect::SfCabspotting, 0).unwrap();
        assert_eq!(trips, vec![TripRecord::pickup_only(1_213_084_747, 37.751, -122.395)]);
    }

    #[test]
    fn canonical_write_then_parse_is_identity() {
        let trips = vec![
            TripRecord {
                pickup_time: 1_451_606_700,
                pickup: LatLon::new(40.758_000_000_000_01, -73.9855),
                dropoff: Some(LatLon::new(40.7614, -73.9776)),
                dropoff_time: Some(1_451_607_300),
            },
            TripRecord::pickup_only(1_451_606_800, 0.1 + 0.2, -0.0),
        ];
        let mut buf = Vec::new();
        write_canonical_csv(&mut buf, &trips).unwrap();
        let (back, report) = parse_trip_records(buf.as_slice(), Dialect::CanonicalCsv, 0).unwrap();
        assert_eq!(report.rows, 2);
        assert_eq!(back, trips);
    }
}
