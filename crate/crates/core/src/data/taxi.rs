//! Hourly graphs from trip records.
//!
//! Zones are nodes, each trip a directed edge from its pickup zone to its
//! drop-off zone, and every civil-calendar hour between the first and last
//! trip (inclusive) becomes one graph — including hours with no trips at
//! all, so month-long extracts produce hours-in-month many graphs. Labels:
//! 0 for Mon-Thu hours, 1 for Fri-Sun.

use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};

use crate::error::{Error, Result};

use super::{Graph, GraphDataset};

/// One trip record: pickup time (minute precision suffices) and the
/// zone pair it connects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxiTrip {
    pub pickup: NaiveDateTime,
    pub source_zone: u32,
    pub dest_zone: u32,
}

/// Parse a trip CSV with header `pickup_datetime,PULocationID,DOLocationID`
/// and `YYYY-MM-DD HH:MM:SS` timestamps.
pub fn parse_trip_csv(path: &Path) -> Result<Vec<TaxiTrip>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim(),
        None => return Err(Error::format(&file, 1, "empty file")),
    };
    let expected = "pickup_datetime,PULocationID,DOLocationID";
    if header != expected {
        return Err(Error::format(
            &file,
            1,
            format!("expected header {expected:?}, got {header:?}"),
        ));
    }
    let mut trips = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (ts, pu, doo) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a.trim(), b.trim(), c.trim()),
            _ => return Err(Error::format(&file, i + 1, format!("expected 3 fields, got {line:?}"))),
        };
        let pickup = NaiveDateTime::parse_from_str(ts, "%Y-%m-%d %H:%M:%S")
            .map_err(|e| Error::format(&file, i + 1, format!("bad timestamp {ts:?}: {e}")))?;
        let source_zone: u32 = pu
            .parse()
            .map_err(|_| Error::format(&file, i + 1, format!("bad zone id {pu:?}")))?;
        let dest_zone: u32 = doo
            .parse()
            .map_err(|_| Error::format(&file, i + 1, format!("bad zone id {doo:?}")))?;
        trips.push(TaxiTrip {
            pickup,
            source_zone,
            dest_zone,
        });
    }
    Ok(trips)
}

fn hour_floor(t: NaiveDateTime) -> NaiveDateTime {
    t.date().and_hms_opt(t.hour(), 0, 0).unwrap()
}

fn weekend_label(t: NaiveDateTime) -> usize {
    match t.weekday() {
        Weekday::Mon | Weekday::Tue | Weekday::Wed | Weekday::Thu => 0,
        Weekday::Fri | Weekday::Sat | Weekday::Sun => 1,
    }
}

/// Build the hourly dataset. Every graph has exactly `zone_count` nodes
/// (node i is zone i, with category i shared across graphs, so each zone
/// keeps one persistent learned feature); each trip contributes one
/// directed edge to its pickup hour's graph.
pub fn build_taxi_dataset(trips: &[TaxiTrip], zone_count: usize) -> Result<GraphDataset> {
    if trips.is_empty() {
        return Err(Error::Domain("no trips: cannot build an hourly dataset".into()));
    }
    for (i, t) in trips.iter().enumerate() {
        if t.source_zone as usize >= zone_count || t.dest_zone as usize >= zone_count {
            return Err(Error::Format {
                file: "<trips>".into(),
                line: i + 1,
                message: format!(
                    "trip zones ({}, {}) exceed zone count {zone_count}",
                    t.source_zone, t.dest_zone
                ),
            });
        }
    }

    let first = hour_floor(trips.iter().map(|t| t.pickup).min().unwrap());
    let last = hour_floor(trips.iter().map(|t| t.pickup).max().unwrap());
    let hours = ((last - first).num_hours() + 1) as usize;

    let mut edges_per_hour: Vec<Vec<(u32, u32)>> = vec![Vec::new(); hours];
    for t in trips {
        let slot = (hour_floor(t.pickup) - first).num_hours() as usize;
        edges_per_hour[slot].push((t.source_zone, t.dest_zone));
    }

    let categories: Vec<u32> = (0..zone_count as u32).collect();
    let mut graphs = Vec::with_capacity(hours);
    for (slot, edges) in edges_per_hour.into_iter().enumerate() {
        let stamp = first + chrono::Duration::hours(slot as i64);
        graphs.push(Graph::new(
            zone_count,
            edges,
            categories.clone(),
            weekend_label(stamp),
            stamp.format("%Y-%m-%dT%H").to_string(),
        )?);
    }

    let provenance = format!(
        "hourly trip graphs, {} trips over {hours} hours from {} to {}; label 0 = Mon-Thu, 1 = Fri-Sun",
        trips.len(),
        first.format("%Y-%m-%d %H:%M"),
        last.format("%Y-%m-%d %H:%M"),
    );
    GraphDataset::new("taxi".into(), graphs, 2, zone_count, provenance)
}
