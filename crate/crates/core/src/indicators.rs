//! Tourist indicators over a time window.
//!
//! Day-level indicators (flows, new and repeat tourists) treat a local day as
//! inside a window when its 24 hours overlap the window. Spatial and interest
//! indicators use presence units: distinct (subscriber, zone or tower,
//! local clock hour) triples.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::geo::haversine_m;
use crate::ingest::{CdrTable, Country, Poi, PoiCategory, TowerIndex};
use crate::mobility::{group_visits, Classification, Visit};
use crate::time::{LocalDay, TimeWindow, UtcOffset, SECS_PER_DAY};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlowCounts {
    /// Distinct tourists active in the window.
    pub visitors: u64,
    /// (tourist, local day) pairs active in the window.
    pub tourist_days: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SegmentedFlow {
    pub per_country: BTreeMap<Country, FlowCounts>,
    pub total: FlowCounts,
}

pub fn segmented_flows(
    visits: &[Visit],
    classes: &Classification,
    window: TimeWindow,
    offset: UtcOffset,
) -> SegmentedFlow {
    let (first, last) = window.local_days(offset);
    let mut flow = SegmentedFlow::default();
    for (subscriber, vs) in group_visits(visits) {
        let Some(class) = classes.get(subscriber).filter(|c| c.is_tourist()) else {
            continue;
        };
        let days: usize = vs.iter().map(|v| v.days_between(first, last)).sum();
        if days == 0 {
            continue;
        }
        let entry = flow.per_country.entry(class.origin_country).or_default();
        entry.visitors += 1;
        entry.tourist_days += days as u64;
        flow.total.visitors += 1;
        flow.total.tourist_days += days as u64;
    }
    flow
}

/// Subscribers with a visit active during `event` and no active day in
/// the `lookback_days` whole local days before it (all history when `None`).
pub fn new_tourists(
    visits: &[Visit],
    event: TimeWindow,
    lookback_days: Option<u32>,
    offset: UtcOffset,
) -> BTreeSet<Arc<str>> {
    let (first, last) = event.local_days(offset);
    let prior_first = match lookback_days {
        Some(n) => first.offset(-(n as i32)),
        None => LocalDay(i32::MIN),
    };
    let prior_last = first.offset(-1);
    group_visits(visits)
        .into_iter()
        .filter(|(_, vs)| {
            let attended = vs.iter().any(|v| v.active_between(first, last));
            let prior = prior_first <= prior_last && vs.iter().any(|v| v.active_between(prior_first, prior_last));
            attended && !prior
        })
        .map(|(_, vs)| vs[0].subscriber_id.clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RepeatTourists {
    pub subscribers: BTreeSet<Arc<str>>,
    pub attendees: u64,
    pub revisit_rate: f64,
}

/// Attendees of `event` who start a distinct later visit within
/// `(event.end, event.end + followup_days]` (unbounded when `None`).
pub fn repeat_tourists(
    visits: &[Visit],
    event: TimeWindow,
    followup_days: Option<u32>,
    offset: UtcOffset,
) -> RepeatTourists {
    let (first, last) = event.local_days(offset);
    let horizon = followup_days.map(|d| event.end + i64::from(d) * SECS_PER_DAY);
    let mut out = RepeatTourists::default();
    for (_, vs) in group_visits(visits) {
        let Some(attended) = vs.iter().position(|v| v.active_between(first, last)) else {
            continue;
        };
        out.attendees += 1;
        let revisits = vs.iter().enumerate().any(|(i, v)| {
            i != attended
                && !v.active_between(first, last)
                && v.first_seen > event.end
                && horizon.is_none_or(|h| v.first_seen <= h)
        });
        if revisits {
            out.subscribers.insert(vs[0].subscriber_id.clone());
        }
    }
    out.revisit_rate = if out.attendees == 0 {
        0.0
    } else {
        out.subscribers.len() as f64 / out.attendees as f64
    };
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Day,
    Night,
}

/// Local hours counted as daytime: `[start, end)`, wrapping past midnight
/// when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct DayHours {
    pub start: u8,
    pub end: u8,
}

impl Default for DayHours {
    fn default() -> Self {
        DayHours { start: 8, end: 20 }
    }
}

impl DayHours {
    pub fn period_of(&self, hour: u8) -> Period {
        let day = if self.start <= self.end {
            hour >= self.start && hour < self.end
        } else {
            hour >= self.start || hour < self.end
        };
        if day {
            Period::Day
        } else {
            Period::Night
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialDistribution {
    pub period: Period,
    /// Share of presence units per zone; every zone of the tower file appears.
    pub shares: BTreeMap<String, f64>,
    /// Shannon entropy of the shares over ln(number of zones), in [0, 1].
    pub dispersion: f64,
    pub presence_units: u64,
    /// True when no presence was observed (all shares zero).
    pub empty: bool,
}

/// Shannon entropy of `counts` divided by `ln(n_zones)`.
pub fn normalized_entropy(counts: &[u64], n_zones: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 || n_zones <= 1 {
        return 0.0;
    }
    let positive: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    let h = if positive.iter().all(|&c| c == positive[0]) {
        // Equal masses: exact closed form ln(k).
        (positive.len() as f64).ln()
    } else {
        let n = total as f64;
        -positive
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    (h / (n_zones as f64).ln()).clamp(0.0, 1.0)
}

/// Maps each tower of `table` to its position in `towers`.
pub(crate) fn resolve_towers(table: &CdrTable, towers: &TowerIndex) -> Vec<Option<usize>> {
    table.tower_ids().iter().map(|id| towers.position(id)).collect()
}

pub fn spatial_distribution(
    table: &CdrTable,
    classes: &Classification,
    window: TimeWindow,
    period: Period,
    towers: &TowerIndex,
    offset: UtcOffset,
    day_hours: DayHours,
) -> SpatialDistribution {
    let zone_names: BTreeSet<&str> = towers.towers().iter().map(|t| t.zone_label()).collect();
    let zone_names: Vec<&str> = zone_names.into_iter().collect();
    let zone_of_tower: Vec<usize> = towers
        .towers()
        .iter()
        .map(|t| zone_names.binary_search(&t.zone_label()).expect("zone listed"))
        .collect();
    let resolved = resolve_towers(table, towers);

    let counts = table
        .by_subscriber()
        .filter(|(idx, _)| classes.by_index(*idx).is_tourist())
        .map(|(_, rows)| {
            let lo = rows.partition_point(|r| r.timestamp < window.start);
            let hi = rows.partition_point(|r| r.timestamp < window.end);
            let mut units: Vec<(usize, i64)> = rows[lo..hi]
                .iter()
                .filter(|r| day_hours.period_of(offset.local_hour_of_day(r.timestamp)) == period)
                .filter_map(|r| {
                    let t = resolved[r.tower as usize]?;
                    Some((zone_of_tower[t], offset.local_hour_bucket(r.timestamp)))
                })
                .collect();
            units.sort_unstable();
            units.dedup();
            let mut c = vec![0u64; zone_names.len()];
            for (z, _) in units {
                c[z] += 1;
            }
            c
        })
        .reduce(
            || vec![0u64; zone_names.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );

    let total: u64 = counts.iter().sum();
    let shares = zone_names
        .iter()
        .zip(&counts)
        .map(|(z, &c)| {
            let share = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            (z.to_string(), share)
        })
        .collect();
    SpatialDistribution {
        period,
        shares,
        dispersion: normalized_entropy(&counts, zone_names.len()),
        presence_units: total,
        empty: total == 0,
    }
}

/// Normalized weights over [`PoiCategory::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InterestProfile(pub [f64; 6]);

impl InterestProfile {
    pub fn weight(&self, c: PoiCategory) -> f64 {
        self.0[c.index()]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    fn normalized(mut w: [f64; 6]) -> InterestProfile {
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|x| *x /= s);
        }
        InterestProfile(w)
    }
}

impl Serialize for InterestProfile {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(PoiCategory::ALL.iter().map(|c| (c.as_str(), self.0[c.index()])))
    }
}

/// Category weights of each tower (in `towers` order) from POIs within
/// `radius_m`; towers with no POI nearby get `{other: 1}`.
pub fn tower_interest_weights(towers: &TowerIndex, pois: &[Poi], radius_m: f64) -> Vec<InterestProfile> {
    towers
        .towers()
        .par_iter()
        .map(|t| {
            let mut w = [0.0; 6];
            for p in pois {
                if haversine_m(t.lat, t.lon, p.lat, p.lon) <= radius_m {
                    w[p.category.index()] += 1.0;
                }
            }
            if w.iter().all(|&x| x == 0.0) {
                w[PoiCategory::Other.index()] = 1.0;
            }
            InterestProfile::normalized(w)
        })
        .collect()
}

/// Interest profile of each tourist, keyed by table subscriber index.
pub fn subscriber_interests(
    table: &CdrTable,
    classes: &Classification,
    tower_weights: &[InterestProfile],
    towers: &TowerIndex,
    offset: UtcOffset,
) -> Vec<(u32, InterestProfile)> {
    let resolved = resolve_towers(table, towers);
    table
        .by_subscriber()
        .filter(|(idx, _)| classes.by_index(*idx).is_tourist())
        .filter_map(|(idx, rows)| {
            let mut stays: Vec<(usize, i64)> = rows
                .iter()
                .filter_map(|r| Some((resolved[r.tower as usize]?, offset.local_hour_bucket(r.timestamp))))
                .collect();
            stays.sort_unstable();
            stays.dedup();
            if stays.is_empty() {
                return None;
            }
            let mut w = [0.0; 6];
            for (t, _) in stays {
                for (acc, x) in w.iter_mut().zip(tower_weights[t].0) {
                    *acc += x;
                }
            }
            Some((idx, InterestProfile::normalized(w)))
        })
        .collect()
}

pub fn interest_profiles(
    table: &CdrTable,
    classes: &Classification,
    towers: &TowerIndex,
    pois: &[Poi],
    poi_radius_m: f64,
    offset: UtcOffset,
) -> BTreeMap<Country, InterestProfile> {
    let weights = tower_interest_weights(towers, pois, poi_radius_m);
    let mut sums: BTreeMap<Country, [f64; 6]> = BTreeMap::new();
    for (idx, p) in subscriber_interests(table, classes, &weights, towers, offset) {
        let acc = sums.entry(classes.by_index(idx).origin_country).or_insert([0.0; 6]);
        for (a, x) in acc.iter_mut().zip(p.0) {
            *a += x;
        }
    }
    sums.into_iter()
        .map(|(c, w)| (c, InterestProfile::normalized(w)))
        .collect()
}
