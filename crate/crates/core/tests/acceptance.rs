//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero when any fails. A non-flag argument runs only criteria
//! whose name contains it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cdrtour::congestion::{
    assign_to_links, build_od_matrix, fit_scale, path_arcs, read_od, shortest_path_tree, snap_towers, FlowKey,
    LinkFlows, OdMatrix, SegmentFilter, UNREACHABLE,
};
use cdrtour::indicators::{
    interest_profiles, new_tourists, normalized_entropy, repeat_tourists, segmented_flows, spatial_distribution,
    subscriber_interests, tower_interest_weights, DayHours, Period,
};
use cdrtour::ingest::{
    read_cdr_table, read_counts, read_pois, read_road_graph, read_towers, CdrRecord, CdrTable, Country, PoiCategory,
    Policy, RoadEdge, RoadGraph, RoadNode, Service, Tower, TowerIndex, TrafficCount,
};
use cdrtour::mobility::{classify_subscribers, extract_all_visits, read_visits, summarize_visits, Classification};
use cdrtour::output::{DirSink, MemorySink};
use cdrtour::synth::{generate, MovementModel, SplitMix64, SynthConfig, TrafficModel};
use cdrtour::time::{LocalDay, TimeWindow, UtcOffset};

type Outcome = Result<String, String>;

const OFFSET: UtcOffset = UtcOffset(120);

fn home() -> Country {
    Country::new("AD").unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn world(config: &SynthConfig) -> MemorySink {
    let mut sink = MemorySink::default();
    generate(config, &mut sink).expect("synth");
    sink
}

fn table_of(sink: &MemorySink) -> CdrTable {
    read_cdr_table(&sink.files["cdr.csv"][..], "cdr.csv", Policy::FailFast)
        .expect("cdr")
        .0
}

fn towers_of(sink: &MemorySink) -> TowerIndex {
    read_towers(&sink.files["towers.csv"][..], "towers.csv").expect("towers")
}

fn graph_of(sink: &MemorySink) -> RoadGraph {
    read_road_graph(
        &sink.files["roads_nodes.csv"][..],
        "roads_nodes.csv",
        &sink.files["roads_edges.csv"][..],
        "roads_edges.csv",
    )
    .expect("roads")
}

fn small_world(seed: u64, n_subscribers: usize) -> SynthConfig {
    SynthConfig {
        seed,
        n_subscribers,
        ..SynthConfig::default()
    }
}

fn visit_oracle() -> Outcome {
    let mut checked = 0;
    let mut slowest = Duration::ZERO;
    for seed in [1, 2, 3] {
        let sink = world(&small_world(seed, 1000));
        let t = Instant::now();
        let table = table_of(&sink);
        let classes = classify_subscribers(&table, home());
        let mut got = summarize_visits(&extract_all_visits(&table, 2, OFFSET), &classes);
        slowest = slowest.max(t.elapsed());
        let mut want =
            read_visits(&sink.files["truth_visits.csv"][..], "truth_visits.csv").map_err(|e| e.to_string())?;
        got.sort();
        want.sort();
        let mismatches = want.iter().filter(|v| got.binary_search(v).is_err()).count()
            + got.iter().filter(|v| want.binary_search(v).is_err()).count();
        ensure(mismatches == 0, || {
            format!("seed {seed}: {mismatches} mismatched visits")
        })?;
        checked += want.len();
    }
    ensure(slowest < Duration::from_secs(5), || {
        format!("extraction took {slowest:?}")
    })?;
    Ok(format!("{checked} visits over 3 worlds match, slowest {slowest:.2?}"))
}

fn scan_pairs(records: &mut [CdrRecord], max_gap_s: i64, window_s: i64) -> BTreeMap<(i64, String, String), u64> {
    records.sort_by(|a, b| (a.timestamp, &a.tower_id).cmp(&(b.timestamp, &b.tower_id)));
    let mut out = BTreeMap::new();
    for i in 0..records.len().saturating_sub(1) {
        let (a, b) = (&records[i], &records[i + 1]);
        if a.tower_id != b.tower_id && b.timestamp - a.timestamp <= max_gap_s {
            *out.entry((a.timestamp.div_euclid(window_s), a.tower_id.clone(), b.tower_id.clone()))
                .or_insert(0) += 1;
        }
    }
    out
}

fn named(m: &OdMatrix) -> BTreeMap<(i64, String, String), u64> {
    m.iter_named()
        .map(|(w, a, b, n)| ((w, a.to_string(), b.to_string()), n))
        .collect()
}

fn od_oracle() -> Outcome {
    let mut cells = 0;
    let mut scanned = 0;
    for seed in [1, 2, 3] {
        let sink = world(&small_world(seed, 1000));
        let table = table_of(&sink);
        let classes = classify_subscribers(&table, home());
        let got = build_od_matrix(&table, &classes, SegmentFilter::All, 60, 60);
        let want = read_od(&sink.files["truth_od.csv"][..], "truth_od.csv", 60).map_err(|e| e.to_string())?;
        ensure(named(&got) == named(&want), || {
            format!("seed {seed}: matrix differs from truth")
        })?;
        cells += want.cells().len();

        let mut rng = SplitMix64::new(seed);
        for _ in 0..100 {
            let idx = rng.below(table.n_subscribers() as u64) as u32;
            let mut records: Vec<CdrRecord> = table.subscriber_rows(idx).iter().map(|r| table.to_record(r)).collect();
            let alone = CdrTable::from_records(&records);
            let single = build_od_matrix(
                &alone,
                &classify_subscribers(&alone, home()),
                SegmentFilter::All,
                60,
                60,
            );
            ensure(named(&single) == scan_pairs(&mut records, 3600, 3600), || {
                format!("seed {seed}: pair scan disagrees for {}", table.subscriber_id(idx))
            })?;
            scanned += 1;
        }
    }
    Ok(format!(
        "{cells} cells match truth; {scanned} subscribers agree with the pair scan"
    ))
}

fn random_graph(rng: &mut SplitMix64) -> RoadGraph {
    let n = 2 + rng.below(9) as usize;
    let nodes: Vec<RoadNode> = (0..n)
        .map(|i| RoadNode {
            node_id: format!("n{i}"),
            lat: 42.5 + rng.unit() * 0.05,
            lon: 1.5 + rng.unit() * 0.05,
        })
        .collect();
    let m = rng.below(2 * n as u64 + 1) as usize;
    let mut edges = Vec::new();
    for k in 0..m {
        let a = rng.below(n as u64) as usize;
        let mut b = rng.below(n as u64 - 1) as usize;
        if b >= a {
            b += 1;
        }
        edges.push(RoadEdge {
            edge_id: format!("e{k:02}"),
            from_node: nodes[a].node_id.clone(),
            to_node: nodes[b].node_id.clone(),
            length_m: (10 + rng.below(5000)) as f64,
            freeflow_kmh: [30.0, 50.0, 90.0][rng.below(3) as usize],
            capacity_vph: 1000.0,
            bidirectional: rng.chance(0.6),
        });
    }
    RoadGraph::new(nodes, edges).expect("graph")
}

fn bellman_ford(graph: &RoadGraph, source: usize) -> Vec<u64> {
    let mut d = vec![UNREACHABLE; graph.nodes().len()];
    d[source] = 0;
    for _ in 0..graph.nodes().len() {
        for a in graph.arcs() {
            if d[a.from] != UNREACHABLE && d[a.from] + a.cost_ms < d[a.to] {
                d[a.to] = d[a.from] + a.cost_ms;
            }
        }
    }
    d
}

fn assignment_oracle() -> Outcome {
    let mut pairs = 0;
    for seed in 0..100u64 {
        let mut rng = SplitMix64::new(seed);
        let graph = random_graph(&mut rng);
        let n = graph.nodes().len();
        let trees: Vec<_> = (0..n).map(|s| shortest_path_tree(&graph, s)).collect();
        for (s, tree) in trees.iter().enumerate() {
            let bf = bellman_ford(&graph, s);
            ensure(tree.cost == bf, || {
                format!("seed {seed}: costs from n{s} differ from Bellman-Ford")
            })?;
            for t in 0..n {
                if bf[t] == UNREACHABLE {
                    continue;
                }
                let path = path_arcs(&graph, tree, t).ok_or_else(|| format!("seed {seed}: no path n{s}->n{t}"))?;
                let cost: u64 = path.iter().map(|&a| graph.arcs()[a].cost_ms).sum();
                ensure(cost == bf[t], || {
                    format!("seed {seed}: path n{s}->n{t} costs {cost}, expected {}", bf[t])
                })?;
                pairs += 1;
            }
        }

        let towers = TowerIndex::new(
            graph
                .nodes()
                .iter()
                .map(|nd| Tower {
                    tower_id: format!("T{}", nd.node_id),
                    lat: nd.lat,
                    lon: nd.lon,
                    zone: None,
                })
                .collect(),
        )
        .expect("towers");
        let snapping = snap_towers(&towers, &graph, f64::INFINITY).map_err(|e| e.to_string())?;
        let mut demand = Vec::new();
        for _ in 0..rng.below(40) {
            let a = rng.below(n as u64) as usize;
            let b = rng.below(n as u64) as usize;
            demand.push((
                rng.below(3) as i64,
                format!("Tn{a}"),
                format!("Tn{b}"),
                1 + rng.below(9),
            ));
        }
        let od = OdMatrix::from_named(60, demand.iter().map(|(w, a, b, c)| (*w, a.as_str(), b.as_str(), *c)));
        let result = assign_to_links(&od, &graph, &snapping).map_err(|e| e.to_string())?;

        // Per (window, node): inflow - outflow = reachable demand ending there - starting there.
        let mut balance: BTreeMap<(i64, usize), i128> = BTreeMap::new();
        for (k, f) in result.flows.cells() {
            let arc = &graph.arcs()[k.arc];
            *balance.entry((k.window, arc.to)).or_insert(0) += i128::from(*f);
            *balance.entry((k.window, arc.from)).or_insert(0) -= i128::from(*f);
        }
        let mut unreachable = 0u64;
        for (w, a, b, c) in od.iter_named() {
            let (o, d) = (snapping[a], snapping[b]);
            if trees[o].cost[d] == UNREACHABLE {
                unreachable += c;
                continue;
            }
            *balance.entry((w, d)).or_insert(0) -= i128::from(c);
            *balance.entry((w, o)).or_insert(0) += i128::from(c);
        }
        ensure(balance.values().all(|&b| b == 0), || {
            format!("seed {seed}: conservation violated")
        })?;
        ensure(unreachable == result.unreachable_movements, || {
            format!(
                "seed {seed}: {} unreachable movements reported, {unreachable} expected",
                result.unreachable_movements
            )
        })?;
    }
    Ok(format!(
        "100 graphs, {pairs} reachable pairs agree with Bellman-Ford; conservation exact"
    ))
}

fn scale_recovery() -> Outcome {
    let config = SynthConfig {
        n_subscribers: 3000,
        n_days: 30,
        events: Vec::new(),
        ..SynthConfig::default()
    };
    let sink = world(&config);
    let table = table_of(&sink);
    let graph = graph_of(&sink);
    let od = build_od_matrix(
        &table,
        &classify_subscribers(&table, home()),
        SegmentFilter::All,
        60,
        60,
    );
    let snapping = snap_towers(&towers_of(&sink), &graph, 2000.0).map_err(|e| e.to_string())?;
    let flows = assign_to_links(&od, &graph, &snapping)
        .map_err(|e| e.to_string())?
        .flows;
    let counts = read_counts(&sink.files["counts.csv"][..], "counts.csv").map_err(|e| e.to_string())?;
    let stations: BTreeSet<&str> = counts.iter().map(|c| c.edge_id.as_str()).collect();
    ensure(stations.len() == 50, || format!("{} stations planted", stations.len()))?;
    let t = Instant::now();
    let fit = fit_scale(&flows, &graph, &counts, false).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let rel = (fit.pooled.beta - 4.2).abs() / 4.2;
    ensure(rel <= 0.02, || {
        format!("recovered beta {} is {:.2}% off", fit.pooled.beta, rel * 100.0)
    })?;
    ensure(elapsed < Duration::from_secs(1), || format!("fit took {elapsed:?}"))?;

    // Exact case: flows in multiples of 5 make 4.2 * flow integral, so noiseless counts carry no rounding.
    let planted: Vec<(FlowKey, u64)> = flows.cells().iter().map(|(k, f)| (*k, f * 5)).collect();
    let planted = LinkFlows::new(60, planted);
    let exact_counts: Vec<TrafficCount> = counts
        .iter()
        .map(|c| {
            let e = graph.edge(&c.edge_id).expect("station edge");
            let w = c.window_start.div_euclid(3600);
            let f: u64 = graph
                .arcs()
                .iter()
                .enumerate()
                .filter(|(_, a)| a.edge == e)
                .map(|(i, _)| planted.get(w, i))
                .sum();
            TrafficCount {
                vehicle_count: f / 5 * 21,
                ..c.clone()
            }
        })
        .collect();
    let exact = fit_scale(&planted, &graph, &exact_counts, false).map_err(|e| e.to_string())?;
    ensure(exact.pooled.beta == 4.2, || {
        format!("noiseless beta {}", exact.pooled.beta)
    })?;
    Ok(format!(
        "beta {:.4} ({:.2}% off) from 50 stations in {elapsed:.2?}; noiseless beta exactly 4.2",
        fit.pooled.beta,
        rel * 100.0
    ))
}

fn fixture_record(sub: &str, country: &str, day: LocalDay, hour: i64, tower: &str) -> CdrRecord {
    CdrRecord {
        subscriber_id: sub.to_string(),
        timestamp: OFFSET.day_start(day) + hour * 3600,
        tower_id: tower.to_string(),
        registry_country: Country::new(country).unwrap(),
        tac: None,
        service: Service::Call,
    }
}

fn new_and_repeat() -> Outcome {
    let first = LocalDay::parse("2015-07-10").unwrap();
    let last = LocalDay::parse("2015-07-12").unwrap();
    let d = |k: i32| first.offset(k);
    let mut records = Vec::new();
    let mut days = |sub: &str, country: &str, span: std::ops::RangeInclusive<i32>| {
        for k in span {
            records.push(fixture_record(sub, country, d(k), 12, "T1"));
        }
    };
    // s01: inside the event only.
    days("s01", "ES", 0..=1);
    // s02: straddles the event start; active inside the lookback.
    days("s02", "ES", -2..=0);
    // s03: straddles the event end; one visit, so not a revisit.
    days("s03", "FR", 2..=4);
    // s04: earlier visit on the first lookback day.
    days("s04", "FR", -7..=-7);
    days("s04", "FR", 0..=0);
    // s05: earlier visit one day before the lookback.
    days("s05", "FR", -8..=-8);
    days("s05", "FR", 1..=1);
    // s06: one visit from the event far past it.
    days("s06", "GB", 0..=10);
    // s07: attends, returns ten days later.
    days("s07", "GB", 1..=1);
    days("s07", "GB", 10..=10);
    // s08: returns on the last followup day.
    days("s08", "RU", 2..=2);
    days("s08", "RU", 32..=32);
    // s09: returns the day after the followup horizon.
    days("s09", "RU", 2..=2);
    days("s09", "RU", 33..=33);
    // s10: around the event but never during it.
    days("s10", "DE", -6..=-6);
    days("s10", "DE", 10..=10);
    // s11: local, active during the event.
    days("s11", "AD", 0..=2);
    // s12: last record one minute before local midnight preceding the event.
    records.push(CdrRecord {
        timestamp: OFFSET.day_start(first) - 60,
        ..fixture_record("s12", "ES", d(-1), 0, "T1")
    });
    // s01's first record lands exactly at local midnight of the first day.
    records.push(fixture_record("s01", "ES", d(0), 0, "T2"));

    let table = CdrTable::from_records(&records);
    let classes = classify_subscribers(&table, home());
    let visits: Vec<_> = extract_all_visits(&table, 2, OFFSET)
        .into_iter()
        .filter(|v| classes.is_tourist(&v.subscriber_id))
        .collect();
    let window = TimeWindow::from_local_days(first, last, OFFSET).unwrap();
    let names = |s: &BTreeSet<std::sync::Arc<str>>| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let new = names(&new_tourists(&visits, window, Some(7), OFFSET));
    let repeat = repeat_tourists(&visits, window, Some(30), OFFSET);
    let want_new = ["s01", "s03", "s05", "s06", "s07", "s08", "s09"];
    let want_repeat = ["s07", "s08"];
    ensure(new == want_new, || {
        format!("new tourists {new:?}, expected {want_new:?}")
    })?;
    ensure(names(&repeat.subscribers) == want_repeat, || {
        format!("repeat tourists {:?}, expected {want_repeat:?}", repeat.subscribers)
    })?;
    ensure(repeat.attendees == 9, || {
        format!("{} attendees, expected 9", repeat.attendees)
    })?;
    ensure(repeat.revisit_rate == 2.0 / 9.0, || {
        format!("revisit rate {}", repeat.revisit_rate)
    })?;
    Ok("12 subscribers: new, repeat and attendee sets match".into())
}

fn entropy_fixture(uniform: bool) -> f64 {
    let towers: Vec<Tower> = (0..7)
        .map(|i| Tower {
            tower_id: format!("T{i}"),
            lat: 42.5 + 0.01 * i as f64,
            lon: 1.5,
            zone: Some(format!("Z{i}")),
        })
        .collect();
    let day = LocalDay::parse("2015-07-10").unwrap();
    let records: Vec<CdrRecord> = (0..7)
        .map(|i| {
            fixture_record(
                "u1",
                "ES",
                day,
                9 + i,
                if uniform { &towers[i as usize].tower_id } else { "T3" },
            )
        })
        .collect();
    let table = CdrTable::from_records(&records);
    let classes = classify_subscribers(&table, home());
    let window = TimeWindow::from_local_days(day, day, OFFSET).unwrap();
    let index = TowerIndex::new(towers).unwrap();
    spatial_distribution(
        &table,
        &classes,
        window,
        Period::Day,
        &index,
        OFFSET,
        DayHours::default(),
    )
    .dispersion
}

fn distribution_invariants() -> Outcome {
    let sink = world(&small_world(7, 3000));
    let table = table_of(&sink);
    let towers = towers_of(&sink);
    let (pois, _) = read_pois(&sink.files["pois.csv"][..], "pois.csv").map_err(|e| e.to_string())?;
    let classes = classify_subscribers(&table, home());
    let (a, b) = table.time_span().unwrap();
    let mut windows = vec![TimeWindow::from_local_days(OFFSET.local_day(a), OFFSET.local_day(b), OFFSET).unwrap()];
    for e in cdrtour::events::read_events(&sink.files["events.json"][..]).map_err(|e| e.to_string())? {
        windows.push(e.window(OFFSET));
    }
    let off = |s: f64| (s - 1.0).abs() > 1e-9;
    let mut checked = 0;
    for w in &windows {
        for period in [Period::Day, Period::Night] {
            let s = spatial_distribution(&table, &classes, *w, period, &towers, OFFSET, DayHours::default());
            let sum: f64 = s.shares.values().sum();
            ensure(s.empty || !off(sum), || format!("spatial shares sum to {sum}"))?;
            ensure((0.0..=1.0).contains(&s.dispersion), || {
                format!("dispersion {}", s.dispersion)
            })?;
            checked += 1;
        }
    }
    let weights = tower_interest_weights(&towers, &pois, 300.0);
    ensure(weights.iter().all(|p| !off(p.sum())), || {
        "tower weights not normalized".into()
    })?;
    for (_, p) in subscriber_interests(&table, &classes, &weights, &towers, OFFSET) {
        ensure(!off(p.sum()), || format!("subscriber profile sums to {}", p.sum()))?;
        checked += 1;
    }
    for (c, p) in interest_profiles(&table, &classes, &towers, &pois, 300.0, OFFSET) {
        ensure(!off(p.sum()), || format!("{c} profile sums to {}", p.sum()))?;
        checked += 1;
    }
    let point = entropy_fixture(false);
    let uniform = entropy_fixture(true);
    ensure(point == 0.0, || format!("point mass dispersion {point}"))?;
    ensure(uniform == 1.0, || format!("uniform dispersion {uniform}"))?;
    ensure(
        normalized_entropy(&[0, 0, 9, 0], 4) == 0.0 && normalized_entropy(&[5; 6], 6) == 1.0,
        || "closed-form entropy not exact".into(),
    )?;
    Ok(format!("{checked} distributions sum to 1; point mass 0, uniform 1"))
}

fn country_mix() -> Outcome {
    let config = SynthConfig {
        n_subscribers: 100_000,
        n_days: 3,
        local_share: 0.1,
        events: Vec::new(),
        records_per_active_hour: 0.3,
        movement: MovementModel {
            step_prob_per_hour: 0.1,
            ..MovementModel::default()
        },
        country_mix: [("ES", 0.60), ("FR", 0.30), ("GB", 0.04), ("RU", 0.03), ("DE", 0.03)]
            .map(|(k, v)| (k.to_string(), v))
            .into(),
        traffic: TrafficModel {
            n_stations: 5,
            ..TrafficModel::default()
        },
        ..SynthConfig::default()
    };
    let sink = world(&config);
    let table = table_of(&sink);
    let classes = classify_subscribers(&table, home());
    let visits = extract_all_visits(&table, 2, OFFSET);
    let (a, b) = table.time_span().unwrap();
    let window = TimeWindow::from_local_days(OFFSET.local_day(a), OFFSET.local_day(b), OFFSET).unwrap();
    let flow = segmented_flows(&visits, &classes, window, OFFSET);
    let of = |c: &str| {
        flow.per_country
            .get(&Country::new(c).unwrap())
            .map_or(0, |f| f.visitors)
    };
    let share = (of("ES") + of("FR")) as f64 / flow.total.visitors as f64;
    ensure((share - 0.90).abs() <= 0.01, || format!("ES+FR share {share:.4}"))?;
    Ok(format!("ES+FR share {share:.4} of {} visitors", flow.total.visitors))
}

fn interest_recovery() -> Outcome {
    // Equal country shares keep every per-country mean over ~1800 tourists.
    let config = SynthConfig {
        n_subscribers: 10_000,
        n_days: 30,
        events: Vec::new(),
        country_mix: ["ES", "FR", "GB", "RU", "DE"].map(|k| (k.to_string(), 0.2)).into(),
        ..SynthConfig::default()
    };
    let sink = world(&config);
    let table = table_of(&sink);
    let towers = towers_of(&sink);
    let (pois, _) = read_pois(&sink.files["pois.csv"][..], "pois.csv").map_err(|e| e.to_string())?;
    let weights = tower_interest_weights(&towers, &pois, 300.0);
    ensure(
        weights.iter().all(|p| p.0.iter().filter(|&&x| x == 1.0).count() == 1),
        || "towers are not category-pure".into(),
    )?;

    let mut planted: BTreeMap<String, ([f64; 6], usize)> = BTreeMap::new();
    let mut rdr = csv::Reader::from_reader(&sink.files["truth_interests.csv"][..]);
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let entry = planted.entry(row[1].to_string()).or_insert(([0.0; 6], 0));
        for (i, acc) in entry.0.iter_mut().enumerate() {
            *acc += row[3 + i].parse::<f64>().map_err(|e| e.to_string())?;
        }
        entry.1 += 1;
    }
    let classes: Classification = classify_subscribers(&table, home());
    let got = interest_profiles(&table, &classes, &towers, &pois, 300.0, OFFSET);
    let mut worst = 0.0f64;
    for (country, profile) in &got {
        let (sum, n) = planted
            .get(country.as_str())
            .ok_or_else(|| format!("{country} not planted"))?;
        for c in PoiCategory::ALL {
            let want = sum[c.index()] / *n as f64;
            let err = (profile.weight(c) - want).abs();
            worst = worst.max(err);
            ensure(err <= 0.02, || {
                format!(
                    "{country} {}: {:.4} recovered, {want:.4} planted",
                    c.as_str(),
                    profile.weight(c)
                )
            })?;
        }
    }
    ensure(got.len() >= 5, || format!("only {} countries profiled", got.len()))?;
    Ok(format!("{} countries, worst category error {worst:.4}", got.len()))
}

fn cli(args: &[&str], config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_cdrtour"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), || {
        format!("`cdrtour {}` exited with {status}", args.join(" "))
    })
}

fn pipeline(config: &Path, out: &Path, threads: &str) -> Result<(), String> {
    for sub in [
        &["indicators"][..],
        &["od"],
        &["assign"],
        &["scale", "--per-window"],
        &["compare"],
    ] {
        let mut args = sub.to_vec();
        args.extend(["--threads", threads]);
        cli(&args, config, out)?;
    }
    Ok(())
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("out dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).expect("file"),
            )
        })
        .collect()
}

/// Synth world of the event-comparison run, shared with the radar criterion.
fn determinism_world(root: &Path) -> PathBuf {
    let dir = root.join("world");
    let mut sink = DirSink::new(&dir).expect("dir");
    generate(&small_world(11, 4000), &mut sink).expect("synth");
    dir
}

fn determinism(root: &Path) -> Outcome {
    let world = determinism_world(root);
    let config = world.join("run_config.json");
    let (a, b, c) = (root.join("t1"), root.join("t8"), root.join("shuffled"));
    pipeline(&config, &a, "1")?;
    pipeline(&config, &b, "8")?;
    let (fa, fb) = (read_dir(&a), read_dir(&b));
    ensure(fa == fb, || {
        let diff: Vec<_> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
        format!("--threads 1 and 8 differ in {diff:?}")
    })?;

    let shuffled = root.join("world_shuffled");
    std::fs::create_dir_all(&shuffled).map_err(|e| e.to_string())?;
    for (name, bytes) in read_dir(&world) {
        let bytes = if name == "cdr.csv" {
            let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
            let mut lines: Vec<&str> = text.lines().collect();
            let mut rng = SplitMix64::new(99);
            for i in (2..lines.len()).rev() {
                let j = 1 + rng.below(i as u64) as usize;
                lines.swap(i, j);
            }
            (lines.join("\n") + "\n").into_bytes()
        } else {
            bytes
        };
        std::fs::write(shuffled.join(name), bytes).map_err(|e| e.to_string())?;
    }
    pipeline(&shuffled.join("run_config.json"), &c, "8")?;
    let fc = read_dir(&c);
    ensure(fa.keys().eq(fc.keys()), || "shuffled run wrote different files".into())?;
    for (name, bytes) in &fa {
        if name.starts_with("manifest-") {
            let outputs = |b: &[u8]| serde_json::from_slice::<serde_json::Value>(b).map(|v| v["outputs"].clone());
            ensure(outputs(bytes).ok() == outputs(&fc[name]).ok(), || {
                format!("{name} outputs differ after shuffling")
            })?;
        } else {
            ensure(*bytes == fc[name], || format!("{name} differs after shuffling"))?;
        }
    }
    Ok(format!(
        "{} files byte-identical across thread counts; outputs identical under shuffling",
        fa.len()
    ))
}

fn peak_child_rss_bytes() -> u64 {
    // SAFETY: getrusage only writes into the provided struct.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    unsafe { libc::getrusage(libc::RUSAGE_CHILDREN, &mut usage) };
    usage.ru_maxrss as u64 * 1024
}

fn throughput(root: &Path) -> Outcome {
    let dir = root.join("big");
    let config = SynthConfig {
        n_subscribers: 52_000,
        n_days: 40,
        events: Vec::new(),
        ..SynthConfig::default()
    };
    let mut sink = DirSink::new(&dir).map_err(|e| e.to_string())?;
    let summary = generate(&config, &mut sink).map_err(|e| e.to_string())?;
    ensure(summary.n_records >= 10_000_000, || {
        format!("only {} records generated", summary.n_records)
    })?;
    let run_config = dir.join("run_config.json");
    let out = root.join("big_out");
    let t = Instant::now();
    for sub in ["indicators", "od", "assign", "scale"] {
        cli(&[sub], &run_config, &out)?;
    }
    let elapsed = t.elapsed();
    let rss = peak_child_rss_bytes();
    let detail = format!(
        "{} records in {:.1} s, peak RSS {:.2} GB on {} core(s)",
        summary.n_records,
        elapsed.as_secs_f64(),
        rss as f64 / 1e9,
        std::thread::available_parallelism().map_or(1, |n| n.get())
    );
    ensure(elapsed <= Duration::from_secs(120) && rss <= 4_000_000_000, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn event_radar(root: &Path) -> Outcome {
    let radar = root.join("t1").join("radar.csv");
    let mut rdr = csv::Reader::from_path(&radar).map_err(|e| format!("{}: {e}", radar.display()))?;
    let mut columns: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut events = BTreeSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        events.insert(row[0].to_string());
        let parse = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
        columns
            .entry(row[1].to_string())
            .or_default()
            .push((parse(&row[2])?, parse(&row[3])?));
    }
    ensure(events.len() == 5 && columns.len() == 6, || {
        format!("{} events x {} indicators", events.len(), columns.len())
    })?;
    let mut degenerate = Vec::new();
    for (name, col) in &columns {
        ensure(col.len() == 5, || format!("{name} has {} rows", col.len()))?;
        let raw_equal = col.iter().all(|v| v.0 == col[0].0);
        if raw_equal {
            degenerate.push(name.clone());
            continue;
        }
        let has = |x: f64| col.iter().any(|v| v.1 == x);
        ensure(has(0.0) && has(1.0), || format!("{name} does not span [0, 1]"))?;
    }
    Ok(format!(
        "5 x 6 radar; every column spans [0, 1]; degenerate: {degenerate:?}"
    ))
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let root = tempfile::tempdir().expect("tempdir");
    let r = root.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("visit_oracle", Box::new(visit_oracle)),
        ("od_oracle", Box::new(od_oracle)),
        ("assignment_oracle", Box::new(assignment_oracle)),
        ("scale_recovery", Box::new(scale_recovery)),
        ("new_and_repeat_tourists", Box::new(new_and_repeat)),
        ("distribution_invariants", Box::new(distribution_invariants)),
        ("country_mix_anchor", Box::new(country_mix)),
        ("interest_recovery", Box::new(interest_recovery)),
        (
            "determinism",
            Box::new({
                let r = r.clone();
                move || determinism(&r)
            }),
        ),
        (
            "throughput",
            Box::new({
                let r = r.clone();
                move || throughput(&r)
            }),
        ),
        (
            "event_radar",
            Box::new({
                let r = r.clone();
                move || {
                    if !r.join("t1").join("radar.csv").exists() {
                        let world = determinism_world(&r);
                        pipeline(&world.join("run_config.json"), &r.join("t1"), "1")?;
                    }
                    event_radar(&r)
                }
            }),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(format!(
                "panicked: {:?}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(p.downcast_ref::<&str>().copied())
            ))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
