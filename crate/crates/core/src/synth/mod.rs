//! Deterministic synthetic CDR worlds with their ground truth.
//!
//! Each subscriber draws from its own splitmix64 stream, so output bytes
//! depend only on the config, never on thread count or batch size.

mod config;
mod people;
mod rng;
mod world;

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

pub use config::{MovementModel, SynthConfig, SynthEvent, TacSpec, TrafficModel, VisitModel};
pub use rng::SplitMix64;

use crate::config::RunConfig;
use crate::congestion::{assign_to_links, edge_flows, snap_towers, write_od, OdMatrix, StationKey};
use crate::ingest::{
    write_cdr_header, write_cdr_row, write_counts, write_pois, write_road_edges, write_road_nodes, write_tac_prices,
    write_towers, CdrRecord, Country, PoiCategory, TacPrice, TacPriceTable, TrafficCount,
};
use crate::mobility::{write_visits, VisitSummary};
use crate::output::{csv_io, Sink};
use crate::time::{LocalDay, UtcOffset};
use people::{simulate, Context, Person};

const WORLD_SALT: u64 = 0x5EED_0000_0000_0001;
const COUNTS_SALT: u64 = 0x5EED_0000_0000_0002;
const CHUNK: usize = 2048;
const CHUNKS_PER_ROUND: usize = 16;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counters kept while generating.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthSummary {
    pub n_subscribers: u64,
    pub n_records: u64,
    pub n_visits: u64,
    pub n_trips: u64,
    /// Subscribers per registry country.
    pub countries: BTreeMap<Country, u64>,
}

pub const TRUTH_INTERESTS_HEADER: [&str; 9] = [
    "subscriber_id",
    "origin_country",
    "tac",
    "shopping",
    "nature",
    "culture",
    "sports",
    "wellness",
    "other",
];

struct ChunkOut {
    cdr: Vec<u8>,
    visits: Vec<VisitSummary>,
    interests: Vec<u8>,
    trips: HashMap<(i64, u32, u32), u64>,
    summary: SynthSummary,
}

fn render_chunk(ctx: &Context<'_>, ids: std::ops::Range<usize>, id_width: usize) -> csv::Result<ChunkOut> {
    let plan = ctx.plan;
    let window_secs = i64::from(ctx.config.traffic.window_minutes) * 60;
    let mut cdr = csv::Writer::from_writer(Vec::new());
    let mut interests = csv::Writer::from_writer(Vec::new());
    let mut out = ChunkOut {
        cdr: Vec::new(),
        visits: Vec::new(),
        interests: Vec::new(),
        trips: HashMap::new(),
        summary: SynthSummary::default(),
    };
    for k in ids {
        let person: Person = simulate(ctx, k);
        let id = format!("u{:0id_width$}", k + 1);
        let country = plan.countries.get(person.country).copied().unwrap_or(plan.home);
        let tac = person.tac.map(|i| plan.tacs[i]);
        let mut rec = CdrRecord {
            subscriber_id: id.clone(),
            timestamp: 0,
            tower_id: String::new(),
            registry_country: country,
            tac,
            service: crate::ingest::Service::Call,
        };
        for &(ts, tower, service) in &person.records {
            rec.timestamp = ts;
            rec.tower_id.clear();
            rec.tower_id
                .push_str(&ctx.world.towers.towers()[tower as usize].tower_id);
            rec.service = service;
            write_cdr_row(&mut cdr, &rec)?;
        }
        for &(first, last, days) in &person.visits {
            out.visits.push(VisitSummary {
                subscriber_id: id.clone(),
                origin_country: country,
                first_seen: first,
                last_seen: last,
                n_active_days: days as usize,
            });
        }
        let mix = plan.interests[person.country];
        let mut row = vec![id, country.to_string(), tac.map(|t| t.to_string()).unwrap_or_default()];
        row.extend(PoiCategory::ALL.iter().map(|c| format!("{:.6}", mix[c.index()])));
        interests.write_record(&row)?;
        for &(dep, from, to) in &person.trips {
            *out.trips.entry((dep.div_euclid(window_secs), from, to)).or_insert(0) += 1;
        }
        out.summary.n_subscribers += 1;
        out.summary.n_records += person.records.len() as u64;
        out.summary.n_visits += person.visits.len() as u64;
        out.summary.n_trips += person.trips.len() as u64;
        *out.summary.countries.entry(country).or_insert(0) += 1;
    }
    out.cdr = cdr.into_inner().map_err(|e| e.into_error())?;
    out.interests = interests.into_inner().map_err(|e| e.into_error())?;
    Ok(out)
}

fn merge_summary(into: &mut SynthSummary, s: SynthSummary) {
    into.n_subscribers += s.n_subscribers;
    into.n_records += s.n_records;
    into.n_visits += s.n_visits;
    into.n_trips += s.n_trips;
    for (c, n) in s.countries {
        *into.countries.entry(c).or_insert(0) += n;
    }
}

fn put_csv(sink: &mut dyn Sink, name: &str, f: impl Fn(&mut dyn Write) -> csv::Result<()>) -> io::Result<()> {
    sink.put(name, &mut |w| f(w).map_err(csv_io))
}

/// Generates a world and writes every ingest file, the ground truth,
/// `events.json`, the effective `synth_config.json` and a `run_config.json`
/// pointing at the generated files.
pub fn generate(config: &SynthConfig, sink: &mut dyn Sink) -> Result<SynthSummary, SynthError> {
    let plan = config.plan().map_err(SynthError::Invalid)?;
    let world = world::build_world(
        &mut SplitMix64::new(config.seed ^ WORLD_SALT),
        config.n_towers,
        config.min_tower_separation_m,
        config.n_road_edges,
        config.movement.max_hop_m,
    )
    .map_err(|e| SynthError::Invalid(vec![e]))?;
    let weights = people::day_weights(config, &plan);
    let ctx = Context {
        config,
        plan: &plan,
        world: &world,
        day_weights: &weights,
    };
    let id_width = config.n_subscribers.to_string().len().max(6);

    let mut summary = SynthSummary::default();
    let mut visits: Vec<VisitSummary> = Vec::new();
    let mut interests: Vec<u8> = Vec::new();
    let mut trips: HashMap<(i64, u32, u32), u64> = HashMap::new();
    sink.put("cdr.csv", &mut |w| {
        summary = SynthSummary::default();
        visits.clear();
        interests.clear();
        trips.clear();
        let mut header = csv::Writer::from_writer(&mut *w);
        write_cdr_header(&mut header).map_err(csv_io)?;
        header.flush()?;
        drop(header);
        let chunks: Vec<std::ops::Range<usize>> = (0..config.n_subscribers)
            .step_by(CHUNK)
            .map(|s| s..(s + CHUNK).min(config.n_subscribers))
            .collect();
        for round in chunks.chunks(CHUNKS_PER_ROUND) {
            let outs: Vec<ChunkOut> = round
                .par_iter()
                .map(|r| render_chunk(&ctx, r.clone(), id_width))
                .collect::<csv::Result<_>>()
                .map_err(csv_io)?;
            for o in outs {
                w.write_all(&o.cdr)?;
                visits.extend(o.visits);
                interests.extend(o.interests);
                for (k, n) in o.trips {
                    *trips.entry(k).or_insert(0) += n;
                }
                merge_summary(&mut summary, o.summary);
            }
        }
        Ok(())
    })?;

    let towers = world.towers.towers();
    let window_minutes = config.traffic.window_minutes;
    let truth_od = OdMatrix::from_named(
        window_minutes,
        trips
            .iter()
            .map(|(&(win, a, b), &n)| (win, &*towers[a as usize].tower_id, &*towers[b as usize].tower_id, n)),
    );
    let counts = plant_counts(config, &plan, &world, &truth_od)?;

    put_csv(sink, "towers.csv", |w| write_towers(w, towers))?;
    put_csv(sink, "roads_nodes.csv", |w| write_road_nodes(w, world.graph.nodes()))?;
    put_csv(sink, "roads_edges.csv", |w| write_road_edges(w, world.graph.edges()))?;
    put_csv(sink, "pois.csv", |w| write_pois(w, &world.pois))?;
    put_csv(sink, "counts.csv", |w| write_counts(w, &counts))?;
    let prices = TacPriceTable::new(config.tac_pool.iter().zip(&plan.tacs).map(|(t, tac)| {
        (
            *tac,
            TacPrice {
                brand: t.brand.clone(),
                model: t.model.clone(),
                price_usd: (t.price_usd * 100.0).round() / 100.0,
            },
        )
    }))
    .map_err(|e| SynthError::Invalid(vec![e.to_string()]))?;
    put_csv(sink, "tac_prices.csv", |w| write_tac_prices(w, &prices))?;

    let events: Vec<crate::events::EventDef> = config
        .events
        .iter()
        .zip(&plan.events)
        .map(|(e, &(first_day, last_day, _))| crate::events::EventDef {
            name: e.name.clone(),
            first_day,
            last_day,
            lookback_days: None,
            followup_days: None,
        })
        .collect();
    sink.put("events.json", &mut |w| {
        crate::events::write_events(&mut *w, &events).map_err(io::Error::from)?;
        w.write_all(b"\n")
    })?;

    put_csv(sink, "truth_visits.csv", |w| write_visits(w, &visits))?;
    put_csv(sink, "truth_od.csv", |w| write_od(w, &truth_od))?;
    sink.put("truth_interests.csv", &mut |w| {
        let mut h = csv::Writer::from_writer(&mut *w);
        h.write_record(TRUTH_INTERESTS_HEADER).map_err(csv_io)?;
        h.flush()?;
        drop(h);
        w.write_all(&interests)
    })?;
    sink.put("truth_beta.txt", &mut |w| {
        writeln!(w, "{}", config.traffic.planted_beta)
    })?;
    sink.put("synth_config.json", &mut |w| {
        serde_json::to_writer_pretty(&mut *w, config).map_err(io::Error::from)?;
        w.write_all(b"\n")
    })?;
    let run = RunConfig {
        events: Some("events.json".into()),
        home_country: config.home_country.clone(),
        utc_offset_minutes: config.utc_offset_minutes,
        window_minutes,
        ..RunConfig::default()
    };
    sink.put("run_config.json", &mut |w| {
        serde_json::to_writer_pretty(&mut *w, &run).map_err(io::Error::from)?;
        w.write_all(b"\n")
    })?;
    Ok(summary)
}

/// Counts on the busiest edges: planted beta times the ground-truth flow,
/// with relative gaussian noise, rounded and clamped at zero. Every window
/// of the horizon is observed.
fn plant_counts(
    config: &SynthConfig,
    plan: &config::Plan,
    world: &world::World,
    truth_od: &OdMatrix,
) -> Result<Vec<TrafficCount>, SynthError> {
    let graph = &world.graph;
    let snapping =
        snap_towers(&world.towers, graph, f64::INFINITY).map_err(|e| SynthError::Invalid(vec![e.to_string()]))?;
    let flows = assign_to_links(truth_od, graph, &snapping)
        .map_err(|e| SynthError::Invalid(vec![e.to_string()]))?
        .flows;
    let per_edge: BTreeMap<StationKey, u64> = edge_flows(&flows, graph);
    let mut totals = vec![0u64; graph.edges().len()];
    for (k, f) in &per_edge {
        totals[k.edge] += f;
    }
    let mut order: Vec<usize> = (0..graph.edges().len()).collect();
    order.sort_by(|&a, &b| {
        totals[b]
            .cmp(&totals[a])
            .then(graph.edge_rank(a).cmp(&graph.edge_rank(b)))
    });
    let mut stations: Vec<usize> = order.into_iter().take(config.traffic.n_stations).collect();
    stations.sort_by_key(|&e| graph.edge_rank(e));

    let offset = UtcOffset(config.utc_offset_minutes);
    let window_secs = i64::from(config.traffic.window_minutes) * 60;
    let start = offset.day_start(plan.first_day);
    let end = offset.day_start(LocalDay(plan.first_day.0 + config.n_days as i32));
    let windows = start.div_euclid(window_secs)..=(end - 1).div_euclid(window_secs);

    let mut rng = SplitMix64::new(config.seed ^ COUNTS_SALT);
    let t = &config.traffic;
    let mut counts = Vec::with_capacity(stations.len() * windows.clone().count());
    for e in stations {
        for w in windows.clone() {
            let f = per_edge.get(&StationKey { window: w, edge: e }).copied().unwrap_or(0) as f64;
            let noisy = t.planted_beta * f * (1.0 + t.noise_sigma * rng.normal());
            counts.push(TrafficCount {
                edge_id: graph.edges()[e].edge_id.clone(),
                window_start: w * window_secs,
                window_minutes: t.window_minutes,
                vehicle_count: noisy.round().max(0.0) as u64,
            });
        }
    }
    Ok(counts)
}
