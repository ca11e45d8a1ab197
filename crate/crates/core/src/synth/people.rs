use crate::ingest::Service;
use crate::time::{Instant, LocalDay, UtcOffset, SECS_PER_HOUR};

use super::config::{Plan, SynthConfig};
use super::rng::SplitMix64;
use super::world::World;

/// Longest trip between two towers, seconds.
pub(crate) const MAX_TRAVEL_S: u64 = 1200;
const MIN_TRAVEL_S: u64 = 60;
const SERVICE_WEIGHTS: [f64; 3] = [0.3, 0.2, 0.5];
const SERVICES: [Service; 3] = [Service::Call, Service::Sms, Service::Data];

/// Everything generated for one subscriber.
#[derive(Debug, Default)]
pub(crate) struct Person {
    /// Index into `Plan::countries`; `countries.len()` for the home country.
    pub country: usize,
    /// Index into the TAC pool.
    pub tac: Option<usize>,
    /// Strictly increasing timestamps.
    pub records: Vec<(Instant, u32, Service)>,
    /// (first record, last record, active days) per visit.
    pub visits: Vec<(Instant, Instant, u32)>,
    /// (departure, from tower, to tower).
    pub trips: Vec<(Instant, u32, u32)>,
}

pub(crate) struct Context<'a> {
    pub config: &'a SynthConfig,
    pub plan: &'a Plan,
    pub world: &'a World,
    /// Arrival weight per horizon day.
    pub day_weights: &'a [f64],
}

fn pick_from(rng: &mut SplitMix64, list: &[u32], exclude: Option<u32>) -> Option<u32> {
    let n = list.len() - usize::from(exclude.is_some_and(|e| list.contains(&e)));
    if n == 0 {
        return None;
    }
    let mut i = rng.below(n as u64) as usize;
    for &t in list {
        if Some(t) == exclude {
            continue;
        }
        if i == 0 {
            return Some(t);
        }
        i -= 1;
    }
    None
}

struct Walker<'a, 'b> {
    ctx: &'b Context<'a>,
    rng: SplitMix64,
    interest: [f64; 6],
    person: Person,
}

impl Walker<'_, '_> {
    fn any_tower(&mut self, exclude: Option<u32>) -> u32 {
        let n = self.ctx.world.category.len() as u64;
        loop {
            let t = self.rng.below(n) as u32;
            if Some(t) != exclude {
                return t;
            }
        }
    }

    fn entry_tower(&mut self) -> u32 {
        let c = self.rng.weighted(&self.interest);
        match pick_from(&mut self.rng, &self.ctx.world.all[c], None) {
            Some(t) => t,
            None => self.any_tower(None),
        }
    }

    fn next_tower(&mut self, cur: u32) -> u32 {
        let c = self.rng.weighted(&self.interest);
        let world = self.ctx.world;
        if let Some(t) = pick_from(&mut self.rng, &world.near[cur as usize][c], None) {
            return t;
        }
        if let Some(t) = pick_from(&mut self.rng, &world.all[c], Some(cur)) {
            return t;
        }
        self.any_tower(Some(cur))
    }

    fn service(&mut self) -> Service {
        SERVICES[self.rng.weighted(&SERVICE_WEIGHTS)]
    }

    /// One active local day starting at tower `cur`; returns the final tower.
    fn day(&mut self, day_start: Instant, mut cur: u32) -> u32 {
        let cfg = self.ctx.config;
        let [h0, h1] = cfg.movement.active_hours;
        let emitted_before = self.person.records.len();
        for hour in h0..h1 {
            let hs = day_start + i64::from(hour) * SECS_PER_HOUR;
            let moving = self.rng.chance(cfg.movement.step_prob_per_hour);
            let (dep, arr, next) = if moving {
                let dep = self.rng.below(3600 - MAX_TRAVEL_S) as i64;
                let arr = dep + (MIN_TRAVEL_S + self.rng.below(MAX_TRAVEL_S - MIN_TRAVEL_S + 1)) as i64;
                (dep, arr, self.next_tower(cur))
            } else {
                (3600, 3600, cur)
            };
            let mut marks: Vec<i64> = Vec::new();
            for _ in 0..self.rng.poisson(cfg.records_per_active_hour) {
                let s = self.rng.below(3600) as i64;
                if !(moving && (dep..=arr).contains(&s)) {
                    marks.push(s);
                }
            }
            if moving {
                marks.push(dep);
                marks.push(arr);
            }
            marks.sort_unstable();
            marks.dedup();
            for s in marks {
                let tower = if s <= dep { cur } else { next };
                let service = self.service();
                self.person.records.push((hs + s, tower, service));
            }
            if moving {
                self.person.trips.push((hs + dep, cur, next));
                cur = next;
            }
        }
        if self.person.records.len() == emitted_before {
            let span = u64::from(h1 - h0) * SECS_PER_HOUR as u64;
            let ts = day_start + i64::from(h0) * SECS_PER_HOUR + self.rng.below(span) as i64;
            let service = self.service();
            self.person.records.push((ts, cur, service));
        }
        cur
    }

    fn visit(&mut self, first: i32, last: i32, offset: UtcOffset) {
        let start = self.person.records.len();
        let mut cur = self.entry_tower();
        for d in first..=last {
            let day = LocalDay(self.ctx.plan.first_day.0 + d);
            cur = self.day(offset.day_start(day), cur);
        }
        let recs = &self.person.records[start..];
        self.person
            .visits
            .push((recs[0].0, recs[recs.len() - 1].0, (last - first + 1) as u32));
    }
}

/// Arrival weight per horizon day: 1, raised to the largest multiplier of
/// any event covering the day.
pub(crate) fn day_weights(config: &SynthConfig, plan: &Plan) -> Vec<f64> {
    (0..config.n_days as i32)
        .map(|d| {
            let day = LocalDay(plan.first_day.0 + d);
            plan.events
                .iter()
                .filter(|(a, b, _)| *a <= day && day <= *b)
                .map(|e| e.2)
                .fold(1.0, f64::max)
        })
        .collect()
}

pub(crate) fn simulate(ctx: &Context<'_>, k: usize) -> Person {
    let cfg = ctx.config;
    let plan = ctx.plan;
    let mut rng = SplitMix64::stream(cfg.seed, k as u64);
    let local = rng.chance(cfg.local_share);
    let country = if local || plan.countries.is_empty() {
        plan.countries.len()
    } else {
        rng.weighted(&plan.country_weights)
    };
    let tac = if cfg.tac_pool.is_empty() || rng.chance(cfg.tac_missing_share) {
        None
    } else {
        let w: Vec<f64> = cfg.tac_pool.iter().map(|t| t.weight).collect();
        Some(rng.weighted(&w))
    };
    let mut walker = Walker {
        ctx,
        rng,
        interest: plan.interests[country],
        person: Person {
            country,
            tac,
            ..Person::default()
        },
    };
    let offset = UtcOffset(cfg.utc_offset_minutes);
    let n_days = cfg.n_days as i32;
    if country == plan.countries.len() {
        walker.visit(0, n_days - 1, offset);
        return walker.person;
    }
    let v = &cfg.visits;
    let mut arrival = walker.rng.weighted(ctx.day_weights) as i32;
    loop {
        let stay = 1 + walker.rng.geometric(v.stay_p, v.max_stay_days - 1) as i32;
        let last = (arrival + stay - 1).min(n_days - 1);
        walker.visit(arrival, last, offset);
        if !walker.rng.chance(v.revisit_prob) {
            break;
        }
        let span = u64::from(v.max_revisit_gap_days - v.min_revisit_gap_days) + 1;
        let gap = v.min_revisit_gap_days as i32 + walker.rng.below(span) as i32;
        arrival = last + 1 + gap;
        if arrival >= n_days {
            break;
        }
    }
    walker.person
}
