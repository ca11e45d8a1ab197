use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::cdr::CdrRow;
use super::{CdrRecord, Country, Service, Tac};
use crate::time::Instant;

const NO_TAC: u32 = u32::MAX;

/// Compact CDR row. Subscriber and tower are indices into the owning table,
/// ranked by lexicographic id so that ordering by index equals ordering by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Row {
    pub subscriber: u32,
    pub timestamp: Instant,
    pub tower: u32,
    pub service: Service,
    tac: u32,
    pub country: Country,
}

impl Row {
    pub fn tac(&self) -> Option<Tac> {
        (self.tac != NO_TAC).then(|| Tac::from_raw(self.tac))
    }
}

/// All CDR rows of a dataset, sorted by (subscriber, timestamp, tower, ...).
///
/// The sort key covers every field, so the table is identical for any
/// permutation of the input rows.
#[derive(Debug, Clone, Default)]
pub struct CdrTable {
    subscribers: Vec<Arc<str>>,
    towers: Vec<Arc<str>>,
    rows: Vec<Row>,
    offsets: Vec<usize>,
}

impl CdrTable {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a CdrRecord>) -> CdrTable {
        let mut b = CdrTableBuilder::new();
        for r in records {
            b.push(&CdrRow {
                subscriber_id: &r.subscriber_id,
                timestamp: r.timestamp,
                tower_id: &r.tower_id,
                registry_country: r.registry_country,
                tac: r.tac,
                service: r.service,
            });
        }
        b.finish()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn n_subscribers(&self) -> usize {
        self.subscribers.len()
    }

    pub fn subscriber_ids(&self) -> &[Arc<str>] {
        &self.subscribers
    }

    pub fn subscriber_id(&self, idx: u32) -> &Arc<str> {
        &self.subscribers[idx as usize]
    }

    pub fn tower_ids(&self) -> &[Arc<str>] {
        &self.towers
    }

    pub fn tower_id(&self, idx: u32) -> &Arc<str> {
        &self.towers[idx as usize]
    }

    pub fn find_subscriber(&self, id: &str) -> Option<u32> {
        self.subscribers
            .binary_search_by(|s| (**s).cmp(id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn find_tower(&self, id: &str) -> Option<u32> {
        self.towers.binary_search_by(|s| (**s).cmp(id)).ok().map(|i| i as u32)
    }

    /// Time-sorted rows of one subscriber.
    pub fn subscriber_rows(&self, idx: u32) -> &[Row] {
        let i = idx as usize;
        &self.rows[self.offsets[i]..self.offsets[i + 1]]
    }

    /// `(subscriber index, rows)` for every subscriber, in id order.
    pub fn by_subscriber(&self) -> impl IndexedParallelIterator<Item = (u32, &[Row])> + '_ {
        (0..self.subscribers.len() as u32)
            .into_par_iter()
            .map(move |i| (i, self.subscriber_rows(i)))
    }

    pub fn to_record(&self, row: &Row) -> CdrRecord {
        CdrRecord {
            subscriber_id: self.subscriber_id(row.subscriber).to_string(),
            timestamp: row.timestamp,
            tower_id: self.tower_id(row.tower).to_string(),
            registry_country: row.country,
            tac: row.tac(),
            service: row.service,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = CdrRecord> + '_ {
        self.rows.iter().map(|r| self.to_record(r))
    }

    /// Earliest and latest timestamp, if any rows exist.
    pub fn time_span(&self) -> Option<(Instant, Instant)> {
        let min = self.rows.par_iter().map(|r| r.timestamp).min()?;
        let max = self.rows.par_iter().map(|r| r.timestamp).max()?;
        Some((min, max))
    }
}

#[derive(Default)]
struct Interner {
    index: HashMap<Box<str>, u32>,
    names: Vec<Arc<str>>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.names.len() as u32;
        self.index.insert(s.into(), i);
        self.names.push(s.into());
        i
    }

    /// Sorted names and the old-index → rank mapping.
    fn into_ranked(self) -> (Vec<Arc<str>>, Vec<u32>) {
        let mut order: Vec<u32> = (0..self.names.len() as u32).collect();
        order.par_sort_unstable_by(|&a, &b| self.names[a as usize].cmp(&self.names[b as usize]));
        let mut rank = vec![0u32; order.len()];
        for (r, &old) in order.iter().enumerate() {
            rank[old as usize] = r as u32;
        }
        let names = order.iter().map(|&i| self.names[i as usize].clone()).collect();
        (names, rank)
    }
}

#[derive(Default)]
pub struct CdrTableBuilder {
    subscribers: Interner,
    towers: Interner,
    rows: Vec<Row>,
}

impl CdrTableBuilder {
    pub fn new() -> CdrTableBuilder {
        CdrTableBuilder::default()
    }

    pub fn push(&mut self, row: &CdrRow<'_>) {
        let subscriber = self.subscribers.intern(row.subscriber_id);
        let tower = self.towers.intern(row.tower_id);
        self.rows.push(Row {
            subscriber,
            timestamp: row.timestamp,
            tower,
            service: row.service,
            tac: row.tac.map_or(NO_TAC, Tac::raw),
            country: row.registry_country,
        });
    }

    pub fn finish(self) -> CdrTable {
        let (subscribers, sub_rank) = self.subscribers.into_ranked();
        let (towers, tower_rank) = self.towers.into_ranked();
        let mut rows = self.rows;
        rows.par_iter_mut().for_each(|r| {
            r.subscriber = sub_rank[r.subscriber as usize];
            r.tower = tower_rank[r.tower as usize];
        });
        rows.par_sort_unstable();

        let mut offsets = Vec::with_capacity(subscribers.len() + 1);
        offsets.push(0);
        let mut pos = 0;
        for s in 0..subscribers.len() as u32 {
            pos += rows[pos..].partition_point(|r| r.subscriber == s);
            offsets.push(pos);
        }
        CdrTable {
            subscribers,
            towers,
            rows,
            offsets,
        }
    }
}
