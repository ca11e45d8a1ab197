//! Event scorecards and cross-event radar normalization.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::congestion::{
    assign_to_links, build_od_matrix, fit_scale, peak_congestion, snap_towers, CongestionError, LinkFlows, ScaleResult,
    SegmentFilter,
};
use crate::economics::{income_profile, subscriber_prices};
use crate::indicators::{new_tourists, repeat_tourists, segmented_flows, spatial_distribution, DayHours, Period};
use crate::ingest::{CdrTable, Country, ReferenceBundle};
use crate::mobility::{classify_subscribers, extract_all_visits, Classification, Visit};
use crate::time::{format_instant, LocalDay, TimeWindow, UtcOffset};

#[derive(Debug, Error)]
pub enum EventError {
    #[error("events.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("event {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("compare needs at least 2 events, got {0}")]
    TooFewEvents(usize),
    #[error("unknown indicator `{0}`")]
    UnknownIndicator(String),
    #[error(transparent)]
    Congestion(#[from] CongestionError),
}

/// A named run of whole local days, both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDef {
    pub name: String,
    pub first_day: LocalDay,
    pub last_day: LocalDay,
    /// Days before the event searched for prior activity; all history when `None`.
    pub lookback_days: Option<u32>,
    /// Days after the event searched for a revisit; unbounded when `None`.
    pub followup_days: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    name: String,
    start: String,
    end: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lookback_days: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    followup_days: Option<u32>,
}

impl EventDef {
    pub fn window(&self, offset: UtcOffset) -> TimeWindow {
        TimeWindow::from_local_days(self.first_day, self.last_day, offset).expect("validated event window")
    }
}

/// Parses `events.json`: an array of `{name, start, end}` with `YYYY-MM-DD`
/// dates and optional `lookback_days` / `followup_days`.
pub fn read_events<R: Read>(source: R) -> Result<Vec<EventDef>, EventError> {
    let raw: Vec<RawEvent> = serde_json::from_reader(source)?;
    let mut names = BTreeSet::new();
    raw.into_iter()
        .map(|r| {
            let invalid = |reason: &str| EventError::Invalid {
                name: r.name.clone(),
                reason: reason.to_string(),
            };
            if r.name.is_empty() {
                return Err(invalid("empty name"));
            }
            if !names.insert(r.name.clone()) {
                return Err(invalid("duplicate name"));
            }
            let first_day = LocalDay::parse(&r.start).ok_or_else(|| invalid("bad start date"))?;
            let last_day = LocalDay::parse(&r.end).ok_or_else(|| invalid("bad end date"))?;
            if last_day < first_day {
                return Err(invalid("end before start"));
            }
            Ok(EventDef {
                name: r.name,
                first_day,
                last_day,
                lookback_days: r.lookback_days,
                followup_days: r.followup_days,
            })
        })
        .collect()
}

pub fn write_events<W: Write>(w: W, events: &[EventDef]) -> serde_json::Result<()> {
    let raw: Vec<RawEvent> = events
        .iter()
        .map(|e| RawEvent {
            name: e.name.clone(),
            start: e.first_day.to_string(),
            end: e.last_day.to_string(),
            lookback_days: e.lookback_days,
            followup_days: e.followup_days,
        })
        .collect();
    serde_json::to_writer_pretty(w, &raw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisParams {
    pub home_country: Country,
    pub offset: UtcOffset,
    pub visit_gap_days: u32,
    pub window_minutes: u32,
    pub max_gap_minutes: u32,
    pub snap_max_m: f64,
    pub day_hours: DayHours,
}

/// Everything an event scorecard draws on, computed once per dataset.
pub struct Analysis<'a> {
    pub table: &'a CdrTable,
    pub reference: &'a ReferenceBundle,
    pub params: AnalysisParams,
    pub classes: Classification,
    /// Visits of tourists only.
    pub tourist_visits: Vec<Visit>,
    /// Per table subscriber index.
    pub prices: Vec<Option<f64>>,
    /// All-subscriber link flows.
    pub flows: LinkFlows,
    pub scale: ScaleResult,
}

impl<'a> Analysis<'a> {
    /// Fits the road scale once over the whole dataset; every event shares it.
    pub fn new(
        table: &'a CdrTable,
        reference: &'a ReferenceBundle,
        params: AnalysisParams,
    ) -> Result<Analysis<'a>, EventError> {
        let classes = classify_subscribers(table, params.home_country);
        let tourist_visits = extract_all_visits(table, params.visit_gap_days, params.offset)
            .into_iter()
            .filter(|v| classes.is_tourist(&v.subscriber_id))
            .collect();
        let prices = subscriber_prices(table, &reference.tac_prices);
        let od = build_od_matrix(
            table,
            &classes,
            SegmentFilter::All,
            params.window_minutes,
            params.max_gap_minutes,
        );
        let snapping = snap_towers(&reference.towers, &reference.graph, params.snap_max_m)?;
        let flows = assign_to_links(&od, &reference.graph, &snapping)?.flows;
        let scale = fit_scale(&flows, &reference.graph, &reference.counts, false)?;
        Ok(Analysis {
            table,
            reference,
            params,
            classes,
            tourist_visits,
            prices,
            flows,
            scale,
        })
    }

    /// Flows restricted to windows overlapping `window`.
    pub fn flows_during(&self, window: TimeWindow) -> LinkFlows {
        let secs = i64::from(self.flows.window_minutes) * 60;
        let first = window.start.div_euclid(secs);
        let last = (window.end - 1).div_euclid(secs);
        LinkFlows::new(
            self.flows.window_minutes,
            self.flows
                .cells()
                .iter()
                .filter(|(k, _)| (first..=last).contains(&k.window))
                .copied()
                .collect(),
        )
    }

    /// Tourists with a visit active on some day of the event.
    pub fn attendees(&self, event: &EventDef) -> BTreeSet<&str> {
        self.tourist_visits
            .iter()
            .filter(|v| v.active_between(event.first_day, event.last_day))
            .map(|v| &*v.subscriber_id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakLocation {
    pub edge_id: String,
    pub direction: String,
    pub window_start: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventScorecard {
    pub event: String,
    pub start: String,
    pub end: String,
    pub attendees: u64,
    pub tourist_days: u64,
    pub new_tourists: u64,
    pub repeat_rate: f64,
    pub spatial_dispersion: f64,
    /// Median attendee phone price; zero when `income_defined` is false.
    pub income_median: f64,
    pub income_defined: bool,
    pub peak_congestion: f64,
    pub peak_at: Option<PeakLocation>,
}

impl EventScorecard {
    pub fn value(&self, indicator: Indicator) -> f64 {
        match indicator {
            Indicator::TouristDays => self.tourist_days as f64,
            Indicator::NewTourists => self.new_tourists as f64,
            Indicator::RepeatRate => self.repeat_rate,
            Indicator::SpatialDispersion => self.spatial_dispersion,
            Indicator::IncomeMedian => self.income_median,
            Indicator::PeakCongestion => self.peak_congestion,
        }
    }
}

pub fn evaluate_event(analysis: &Analysis<'_>, event: &EventDef) -> EventScorecard {
    let p = analysis.params;
    let window = event.window(p.offset);
    let visits = &analysis.tourist_visits;
    let flow = segmented_flows(visits, &analysis.classes, window, p.offset);
    let new = new_tourists(visits, window, event.lookback_days, p.offset);
    let repeat = repeat_tourists(visits, window, event.followup_days, p.offset);
    let spatial = spatial_distribution(
        analysis.table,
        &analysis.classes,
        window,
        Period::Day,
        &analysis.reference.towers,
        p.offset,
        p.day_hours,
    );
    let attendees = analysis.attendees(event);
    let income = income_profile(attendees.iter().map(|id| {
        let idx = analysis.table.find_subscriber(id).expect("visit subscriber in table");
        analysis.prices[idx as usize]
    }));
    let graph = &analysis.reference.graph;
    let during = analysis.flows_during(window);
    let peak = peak_congestion(&during, analysis.scale.pooled.beta, graph);
    let peak_at = peak.at.map(|k| {
        let arc = &graph.arcs()[k.arc];
        PeakLocation {
            edge_id: graph.edges()[arc.edge].edge_id.clone(),
            direction: arc.direction.as_str().to_string(),
            window_start: format_instant(during.window_start(k.window)),
        }
    });
    EventScorecard {
        event: event.name.clone(),
        start: event.first_day.to_string(),
        end: event.last_day.to_string(),
        attendees: attendees.len() as u64,
        tourist_days: flow.total.tourist_days,
        new_tourists: new.len() as u64,
        repeat_rate: repeat.revisit_rate,
        spatial_dispersion: spatial.dispersion,
        income_median: income.median,
        income_defined: income.defined,
        peak_congestion: peak.score,
        peak_at,
    }
}

/// Scorecards in input order; events are evaluated in parallel.
pub fn evaluate_events(analysis: &Analysis<'_>, events: &[EventDef]) -> Vec<EventScorecard> {
    events.par_iter().map(|e| evaluate_event(analysis, e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    TouristDays,
    NewTourists,
    RepeatRate,
    SpatialDispersion,
    IncomeMedian,
    PeakCongestion,
}

impl Indicator {
    pub const ALL: [Indicator; 6] = [
        Indicator::TouristDays,
        Indicator::NewTourists,
        Indicator::RepeatRate,
        Indicator::SpatialDispersion,
        Indicator::IncomeMedian,
        Indicator::PeakCongestion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::TouristDays => "tourist_days",
            Indicator::NewTourists => "new_tourists",
            Indicator::RepeatRate => "repeat_rate",
            Indicator::SpatialDispersion => "spatial_dispersion",
            Indicator::IncomeMedian => "income_median",
            Indicator::PeakCongestion => "peak_congestion",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| EventError::UnknownIndicator(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadarRow {
    pub event: String,
    pub indicator: Indicator,
    pub raw: f64,
    pub normalized: f64,
}

/// Min-max normalization of raw values; a constant column maps to 0.5.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

/// Rows grouped by event in input order, indicators in [`Indicator::ALL`] order.
pub fn compare_events(
    scorecards: &[EventScorecard],
    invert: &BTreeSet<Indicator>,
) -> Result<Vec<RadarRow>, EventError> {
    if scorecards.len() < 2 {
        return Err(EventError::TooFewEvents(scorecards.len()));
    }
    let columns: Vec<Vec<f64>> = Indicator::ALL
        .iter()
        .map(|&ind| {
            let raw: Vec<f64> = scorecards.iter().map(|s| s.value(ind)).collect();
            let norm = min_max(&raw);
            if invert.contains(&ind) {
                norm.into_iter().map(|x| 1.0 - x).collect()
            } else {
                norm
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(scorecards.len() * Indicator::ALL.len());
    for (e, s) in scorecards.iter().enumerate() {
        for (i, &ind) in Indicator::ALL.iter().enumerate() {
            rows.push(RadarRow {
                event: s.event.clone(),
                indicator: ind,
                raw: s.value(ind),
                normalized: columns[i][e],
            });
        }
    }
    Ok(rows)
}

pub const RADAR_HEADER: [&str; 4] = ["event", "indicator", "raw", "normalized"];

pub fn write_radar<W: Write>(w: W, rows: &[RadarRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(RADAR_HEADER)?;
    for r in rows {
        w.write_record([
            r.event.as_str(),
            r.indicator.as_str(),
            &format!("{:.6}", r.raw),
            &format!("{:.6}", r.normalized),
        ])?;
    }
    w.flush()?;
    Ok(())
}
