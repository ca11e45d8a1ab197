use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::ingest::{CdrTable, Country, Row};
use crate::mobility::Classification;
use crate::time::Instant;

/// Which subscribers contribute movements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentFilter {
    #[default]
    All,
    Tourists,
    Country(Country),
}

impl FromStr for SegmentFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(SegmentFilter::All),
            "tourists" => Ok(SegmentFilter::Tourists),
            other => Country::new(other)
                .map(SegmentFilter::Country)
                .ok_or_else(|| format!("bad segment `{other}`: expected all, tourists or a country code")),
        }
    }
}

impl fmt::Display for SegmentFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentFilter::All => f.write_str("all"),
            SegmentFilter::Tourists => f.write_str("tourists"),
            SegmentFilter::Country(c) => write!(f, "{c}"),
        }
    }
}

impl SegmentFilter {
    fn admits(&self, class: &crate::mobility::SubscriberClass) -> bool {
        match self {
            SegmentFilter::All => true,
            SegmentFilter::Tourists => class.is_tourist(),
            SegmentFilter::Country(c) => class.origin_country == *c,
        }
    }
}

/// Cell key; `from`/`to` index [`OdMatrix::towers`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OdKey {
    pub window: i64,
    pub from: u32,
    pub to: u32,
}

/// Movement counts per (time window, origin tower, destination tower).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OdMatrix {
    pub window_minutes: u32,
    towers: Vec<Arc<str>>,
    // Sorted by key, counts > 0, from != to.
    cells: Vec<(OdKey, u64)>,
}

impl OdMatrix {
    /// Builds a matrix from named cells; duplicate keys are summed and
    /// self-pairs dropped.
    pub fn from_named<S: AsRef<str>>(
        window_minutes: u32,
        cells: impl IntoIterator<Item = (i64, S, S, u64)>,
    ) -> OdMatrix {
        let cells: Vec<(i64, S, S, u64)> = cells.into_iter().collect();
        let mut towers: Vec<Arc<str>> = cells
            .iter()
            .flat_map(|c| [Arc::from(c.1.as_ref()), Arc::from(c.2.as_ref())])
            .collect();
        towers.sort_unstable();
        towers.dedup();
        let idx = |s: &str| towers.binary_search_by(|t| (**t).cmp(s)).expect("tower listed") as u32;
        let keys: Vec<(OdKey, u64)> = cells
            .iter()
            .filter(|c| c.1.as_ref() != c.2.as_ref() && c.3 > 0)
            .map(|c| {
                (
                    OdKey {
                        window: c.0,
                        from: idx(c.1.as_ref()),
                        to: idx(c.2.as_ref()),
                    },
                    c.3,
                )
            })
            .collect();
        OdMatrix {
            window_minutes,
            cells: merge_sorted(keys),
            towers,
        }
    }

    pub fn towers(&self) -> &[Arc<str>] {
        &self.towers
    }

    pub fn tower(&self, idx: u32) -> &Arc<str> {
        &self.towers[idx as usize]
    }

    pub fn cells(&self) -> &[(OdKey, u64)] {
        &self.cells
    }

    pub fn window_seconds(&self) -> i64 {
        i64::from(self.window_minutes) * 60
    }

    pub fn window_start(&self, window: i64) -> Instant {
        window * self.window_seconds()
    }

    pub fn window_of(&self, ts: Instant) -> i64 {
        ts.div_euclid(self.window_seconds())
    }

    pub fn get(&self, window: i64, from: &str, to: &str) -> u64 {
        let find = |s: &str| self.towers.binary_search_by(|t| (**t).cmp(s)).ok();
        let (Some(from), Some(to)) = (find(from), find(to)) else {
            return 0;
        };
        let key = OdKey {
            window,
            from: from as u32,
            to: to as u32,
        };
        self.cells
            .binary_search_by(|c| c.0.cmp(&key))
            .map(|i| self.cells[i].1)
            .unwrap_or(0)
    }

    /// `(window, from, to, count)` in (window, from id, to id) order.
    pub fn iter_named(&self) -> impl Iterator<Item = (i64, &str, &str, u64)> + '_ {
        self.cells.iter().map(|(k, c)| {
            (
                k.window,
                &*self.towers[k.from as usize],
                &*self.towers[k.to as usize],
                *c,
            )
        })
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Sorts keys and sums duplicates.
pub(crate) fn merge_sorted<K: Ord + Copy + Send>(mut cells: Vec<(K, u64)>) -> Vec<(K, u64)> {
    cells.par_sort_unstable_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<(K, u64)> = Vec::with_capacity(cells.len());
    for (k, c) in cells {
        match out.last_mut() {
            Some(last) if last.0 == k => last.1 += c,
            _ => out.push((k, c)),
        }
    }
    out
}

fn subscriber_movements(rows: &[Row], window_secs: i64, max_gap_secs: i64, out: &mut Vec<OdKey>) {
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.tower != b.tower && b.timestamp - a.timestamp <= max_gap_secs {
            out.push(OdKey {
                window: a.timestamp.div_euclid(window_secs),
                from: a.tower,
                to: b.tower,
            });
        }
    }
}

/// Counts each consecutive record pair of one subscriber at different towers
/// and at most `max_gap_minutes` apart, in the window of the earlier record.
pub fn build_od_matrix(
    table: &CdrTable,
    classes: &Classification,
    filter: SegmentFilter,
    window_minutes: u32,
    max_gap_minutes: u32,
) -> OdMatrix {
    let window_secs = i64::from(window_minutes) * 60;
    let max_gap_secs = i64::from(max_gap_minutes) * 60;
    let keys: Vec<OdKey> = table
        .by_subscriber()
        .filter(|(idx, _)| filter.admits(classes.by_index(*idx)))
        .fold(Vec::new, |mut acc, (_, rows)| {
            subscriber_movements(rows, window_secs, max_gap_secs, &mut acc);
            acc
        })
        .reduce(Vec::new, |mut a, mut b| {
            a.append(&mut b);
            a
        });
    let cells = merge_sorted(keys.into_iter().map(|k| (k, 1)).collect());
    OdMatrix {
        window_minutes,
        towers: table.tower_ids().to_vec(),
        cells,
    }
    .compact()
}

impl OdMatrix {
    /// Drops towers that appear in no cell, re-indexing cells.
    fn compact(self) -> OdMatrix {
        let mut used = vec![false; self.towers.len()];
        for (k, _) in &self.cells {
            used[k.from as usize] = true;
            used[k.to as usize] = true;
        }
        let mut remap = vec![u32::MAX; self.towers.len()];
        let mut towers = Vec::new();
        for (i, t) in self.towers.into_iter().enumerate() {
            if used[i] {
                remap[i] = towers.len() as u32;
                towers.push(t);
            }
        }
        let cells = self
            .cells
            .into_iter()
            .map(|(k, c)| {
                (
                    OdKey {
                        window: k.window,
                        from: remap[k.from as usize],
                        to: remap[k.to as usize],
                    },
                    c,
                )
            })
            .collect();
        OdMatrix {
            window_minutes: self.window_minutes,
            towers,
            cells,
        }
    }
}
