//! Subscriber classification and visit segmentation.
//!
//! A visit is a maximal run of a subscriber's active local days in which no
//! two consecutive active days are separated by `visit_gap_days` or more
//! silent days.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::ingest::{CdrRecord, CdrTable, Country, IngestError, Row};
use crate::time::{format_instant, parse_instant, Instant, LocalDay, UtcOffset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TravelerClass {
    Local,
    Tourist,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriberClass {
    pub subscriber_id: Arc<str>,
    pub class: TravelerClass,
    pub origin_country: Country,
}

impl SubscriberClass {
    pub fn is_tourist(&self) -> bool {
        self.class == TravelerClass::Tourist
    }
}

/// Class of every subscriber in a [`CdrTable`], aligned with the table's
/// subscriber indices (and therefore sorted by id).
#[derive(Debug, Clone, Default)]
pub struct Classification {
    classes: Vec<SubscriberClass>,
    /// Subscribers seen with more than one registry country.
    pub mixed_country: usize,
}

impl Classification {
    pub fn get(&self, subscriber_id: &str) -> Option<&SubscriberClass> {
        self.classes
            .binary_search_by(|c| (*c.subscriber_id).cmp(subscriber_id))
            .ok()
            .map(|i| &self.classes[i])
    }

    pub fn by_index(&self, idx: u32) -> &SubscriberClass {
        &self.classes[idx as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &SubscriberClass> {
        self.classes.iter()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn is_tourist(&self, subscriber_id: &str) -> bool {
        self.get(subscriber_id).is_some_and(SubscriberClass::is_tourist)
    }
}

/// Majority registry country over the rows; ties go to the country seen first.
fn majority_country(rows: &[Row]) -> (Country, bool) {
    // (count, first position)
    let mut tally: Vec<(Country, usize, usize)> = Vec::with_capacity(1);
    for (pos, r) in rows.iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == r.country) {
            Some(t) => t.1 += 1,
            None => tally.push((r.country, 1, pos)),
        }
    }
    let mixed = tally.len() > 1;
    let best = tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|t| t.0)
        .expect("subscriber has rows");
    (best, mixed)
}

pub fn classify_subscribers(table: &CdrTable, home_country: Country) -> Classification {
    let results: Vec<(SubscriberClass, bool)> = table
        .by_subscriber()
        .map(|(idx, rows)| {
            let (origin_country, mixed) = majority_country(rows);
            let class = if origin_country == home_country {
                TravelerClass::Local
            } else {
                TravelerClass::Tourist
            };
            (
                SubscriberClass {
                    subscriber_id: table.subscriber_id(idx).clone(),
                    class,
                    origin_country,
                },
                mixed,
            )
        })
        .collect();
    let mixed_country = results.iter().filter(|r| r.1).count();
    Classification {
        classes: results.into_iter().map(|r| r.0).collect(),
        mixed_country,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visit {
    pub subscriber_id: Arc<str>,
    pub first_seen: Instant,
    pub last_seen: Instant,
    /// Sorted, distinct.
    pub active_days: Vec<LocalDay>,
    /// Records per tower, counting each distinct (timestamp, tower) once.
    pub towers_touched: BTreeMap<Arc<str>, u32>,
}

impl Visit {
    pub fn first_day(&self) -> LocalDay {
        self.active_days[0]
    }

    pub fn last_day(&self) -> LocalDay {
        *self.active_days.last().expect("visit has active days")
    }

    /// Whether any active day lies in `first..=last`.
    pub fn active_between(&self, first: LocalDay, last: LocalDay) -> bool {
        let i = self.active_days.partition_point(|d| *d < first);
        self.active_days.get(i).is_some_and(|d| *d <= last)
    }

    /// Number of active days in `first..=last`.
    pub fn days_between(&self, first: LocalDay, last: LocalDay) -> usize {
        let a = self.active_days.partition_point(|d| *d < first);
        let b = self.active_days.partition_point(|d| *d <= last);
        b.saturating_sub(a)
    }
}

/// Segments time-sorted `(timestamp, tower)` events of one subscriber.
fn segment<'a>(
    subscriber_id: &Arc<str>,
    events: impl Iterator<Item = (Instant, &'a Arc<str>)>,
    visit_gap_days: u32,
    offset: UtcOffset,
) -> Vec<Visit> {
    let mut visits: Vec<Visit> = Vec::new();
    let mut prev: Option<(Instant, &Arc<str>)> = None;
    for (ts, tower) in events {
        if prev == Some((ts, tower)) {
            continue;
        }
        prev = Some((ts, tower));
        let day = offset.local_day(ts);
        let extend = visits.last().is_some_and(|v| {
            let silent = i64::from(day.0) - i64::from(v.last_day().0) - 1;
            silent < i64::from(visit_gap_days)
        });
        if !extend {
            visits.push(Visit {
                subscriber_id: subscriber_id.clone(),
                first_seen: ts,
                last_seen: ts,
                active_days: vec![day],
                towers_touched: BTreeMap::new(),
            });
        }
        let v = visits.last_mut().expect("visit exists");
        v.last_seen = ts;
        if v.last_day() != day {
            v.active_days.push(day);
        }
        *v.towers_touched.entry(tower.clone()).or_insert(0) += 1;
    }
    visits
}

/// Visits of one subscriber from its records, in any order.
pub fn extract_visits(records: &[CdrRecord], visit_gap_days: u32, offset: UtcOffset) -> Vec<Visit> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let subscriber_id: Arc<str> = first.subscriber_id.as_str().into();
    let mut events: Vec<(Instant, Arc<str>)> = records
        .iter()
        .map(|r| (r.timestamp, Arc::from(r.tower_id.as_str())))
        .collect();
    events.sort();
    segment(
        &subscriber_id,
        events.iter().map(|(t, s)| (*t, s)),
        visit_gap_days,
        offset,
    )
}

/// Visits of the subscriber `idx` of `table`.
pub fn subscriber_visits(table: &CdrTable, idx: u32, visit_gap_days: u32, offset: UtcOffset) -> Vec<Visit> {
    let rows = table.subscriber_rows(idx);
    segment(
        table.subscriber_id(idx),
        rows.iter().map(|r| (r.timestamp, table.tower_id(r.tower))),
        visit_gap_days,
        offset,
    )
}

/// Visits of every subscriber, ordered by (subscriber id, first_seen).
pub fn extract_all_visits(table: &CdrTable, visit_gap_days: u32, offset: UtcOffset) -> Vec<Visit> {
    let per: Vec<Vec<Visit>> = table
        .by_subscriber()
        .map(|(idx, _)| subscriber_visits(table, idx, visit_gap_days, offset))
        .collect();
    per.into_iter().flatten().collect()
}

/// Groups visits by subscriber, preserving `first_seen` order within each.
pub fn group_visits(visits: &[Visit]) -> BTreeMap<&str, Vec<&Visit>> {
    let mut map: BTreeMap<&str, Vec<&Visit>> = BTreeMap::new();
    for v in visits {
        map.entry(&*v.subscriber_id).or_default().push(v);
    }
    for vs in map.values_mut() {
        vs.sort_by_key(|v| v.first_seen);
    }
    map
}

pub const VISITS_HEADER: [&str; 5] = [
    "subscriber_id",
    "origin_country",
    "first_seen",
    "last_seen",
    "n_active_days",
];

/// One row of `visits.csv`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct VisitSummary {
    pub subscriber_id: String,
    pub origin_country: Country,
    pub first_seen: Instant,
    pub last_seen: Instant,
    pub n_active_days: usize,
}

pub fn summarize_visits(visits: &[Visit], classes: &Classification) -> Vec<VisitSummary> {
    visits
        .iter()
        .filter_map(|v| {
            let c = classes.get(&v.subscriber_id)?;
            Some(VisitSummary {
                subscriber_id: v.subscriber_id.to_string(),
                origin_country: c.origin_country,
                first_seen: v.first_seen,
                last_seen: v.last_seen,
                n_active_days: v.active_days.len(),
            })
        })
        .collect()
}

pub fn write_visits<W: Write>(w: W, rows: &[VisitSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(VISITS_HEADER)?;
    for r in rows {
        w.write_record([
            r.subscriber_id.as_str(),
            r.origin_country.as_str(),
            &format_instant(r.first_seen),
            &format_instant(r.last_seen),
            &r.n_active_days.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_visits<R: Read>(source: R, label: &str) -> Result<Vec<VisitSummary>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let header = reader.byte_headers().map_err(|e| IngestError::csv(label, e))?.clone();
    if header.iter().ne(VISITS_HEADER.iter().map(|s| s.as_bytes())) {
        return Err(IngestError::Header {
            file: label.into(),
            expected: VISITS_HEADER.join(","),
            found: String::from_utf8_lossy(header.as_slice()).into_owned(),
        });
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| IngestError::csv(label, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: &str| IngestError::Row {
            file: label.into(),
            line,
            reason: reason.into(),
        };
        out.push(VisitSummary {
            subscriber_id: rec[0].to_string(),
            origin_country: Country::new(&rec[1]).ok_or_else(|| bad("bad origin_country"))?,
            first_seen: parse_instant(&rec[2]).ok_or_else(|| bad("bad first_seen"))?,
            last_seen: parse_instant(&rec[3]).ok_or_else(|| bad("bad last_seen"))?,
            n_active_days: rec[4].parse().map_err(|_| bad("bad n_active_days"))?,
        });
    }
    Ok(out)
}
