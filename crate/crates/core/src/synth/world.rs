use crate::geo::{destination, haversine_m};
use crate::ingest::{Poi, PoiCategory, RoadEdge, RoadGraph, RoadNode, Tower, TowerIndex};

use super::rng::SplitMix64;

const LAT: (f64, f64) = (42.43, 42.65);
const LON: (f64, f64) = (1.41, 1.78);

const PARISHES: [(&str, f64, f64); 7] = [
    ("Canillo", 42.567, 1.598),
    ("Encamp", 42.535, 1.583),
    ("Ordino", 42.556, 1.533),
    ("La Massana", 42.545, 1.515),
    ("Andorra la Vella", 42.507, 1.522),
    ("Sant Julia de Loria", 42.464, 1.491),
    ("Escaldes-Engordany", 42.509, 1.539),
];

/// Coordinates as they appear once written with six decimals.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub(crate) struct World {
    pub towers: TowerIndex,
    /// Category of every tower, aligned with `towers`; `Other` towers carry no POI.
    pub category: Vec<PoiCategory>,
    pub pois: Vec<Poi>,
    pub graph: RoadGraph,
    /// `near[t][c]`: towers of category `c` within the hop radius of `t`, excluding `t`.
    pub near: Vec<[Vec<u32>; 6]>,
    /// `all[c]`: every tower of category `c`.
    pub all: [Vec<u32>; 6],
}

fn place_towers(rng: &mut SplitMix64, n: usize, separation_m: f64) -> Result<Vec<(f64, f64)>, String> {
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while placed.len() < n {
        attempts += 1;
        if attempts > 2000 * n.max(1) {
            return Err(format!(
                "n_towers: cannot place {n} towers {separation_m} m apart inside the country"
            ));
        }
        let lat = round6(LAT.0 + rng.unit() * (LAT.1 - LAT.0));
        let lon = round6(LON.0 + rng.unit() * (LON.1 - LON.0));
        if placed.iter().all(|&(a, b)| haversine_m(a, b, lat, lon) >= separation_m) {
            placed.push((lat, lon));
        }
    }
    Ok(placed)
}

fn parish(lat: f64, lon: f64) -> &'static str {
    PARISHES
        .iter()
        .min_by(|a, b| haversine_m(lat, lon, a.1, a.2).total_cmp(&haversine_m(lat, lon, b.1, b.2)))
        .expect("parishes")
        .0
}

/// Prim's minimum spanning tree over great-circle distance, then the
/// shortest remaining pairs until `n_edges` edges exist.
fn road_pairs(points: &[(f64, f64)], n_edges: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let dist = |i: usize, j: usize| haversine_m(points[i].0, points[i].1, points[j].0, points[j].1);
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut pairs = Vec::with_capacity(n_edges);
    if n == 0 {
        return pairs;
    }
    in_tree[0] = true;
    for j in 1..n {
        best[j] = (dist(0, j), 0);
    }
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)))
            .expect("outside node");
        in_tree[next] = true;
        let (a, b) = (best[next].1.min(next), best[next].1.max(next));
        pairs.push((a, b));
        for j in 0..n {
            if !in_tree[j] {
                let d = dist(next, j);
                if d < best[j].0 {
                    best[j] = (d, next);
                }
            }
        }
    }
    if pairs.len() < n_edges {
        let mut used: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
        let mut rest: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if !used.contains(&(i, j)) {
                    rest.push((dist(i, j), i, j));
                }
            }
        }
        rest.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for (_, i, j) in rest {
            if pairs.len() >= n_edges {
                break;
            }
            used.insert((i, j));
            pairs.push((i, j));
        }
    }
    pairs
}

pub(crate) fn build_world(
    rng: &mut SplitMix64,
    n_towers: usize,
    separation_m: f64,
    n_edges: usize,
    max_hop_m: f64,
) -> Result<World, String> {
    let points = place_towers(rng, n_towers, separation_m)?;
    let width = n_towers.to_string().len().max(3);
    let towers: Vec<Tower> = points
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon))| Tower {
            tower_id: format!("T{:0width$}", i + 1),
            lat,
            lon,
            zone: Some(parish(lat, lon).to_string()),
        })
        .collect();

    // Categories cycle so every category is present; the cycle is then shuffled.
    let mut category: Vec<PoiCategory> = (0..n_towers).map(|i| PoiCategory::ALL[i % 6]).collect();
    for i in (1..n_towers).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        category.swap(i, j);
    }

    let mut pois = Vec::new();
    for (t, c) in towers.iter().zip(&category) {
        if *c == PoiCategory::Other {
            continue;
        }
        for _ in 0..1 + rng.below(3) {
            let bearing = rng.unit() * std::f64::consts::TAU;
            let (lat, lon) = destination(t.lat, t.lon, bearing, 10.0 + rng.unit() * 80.0);
            pois.push(Poi {
                poi_id: format!("P{:05}", pois.len() + 1),
                lat: round6(lat),
                lon: round6(lon),
                category: *c,
            });
        }
    }

    let nodes: Vec<RoadNode> = towers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let bearing = rng.unit() * std::f64::consts::TAU;
            let (lat, lon) = destination(t.lat, t.lon, bearing, rng.unit() * 100.0);
            RoadNode {
                node_id: format!("N{:0width$}", i + 1),
                lat: round6(lat),
                lon: round6(lon),
            }
        })
        .collect();
    let node_points: Vec<(f64, f64)> = nodes.iter().map(|n| (n.lat, n.lon)).collect();
    let pairs = road_pairs(&node_points, n_edges);
    let ew = pairs.len().to_string().len().max(3);
    let edges: Vec<RoadEdge> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let class = rng.below(3) as usize;
            let straight = haversine_m(node_points[i].0, node_points[i].1, node_points[j].0, node_points[j].1);
            RoadEdge {
                edge_id: format!("E{:0ew$}", k + 1),
                from_node: nodes[i].node_id.clone(),
                to_node: nodes[j].node_id.clone(),
                length_m: round1((straight * 1.25).max(1.0)),
                freeflow_kmh: [50.0, 70.0, 90.0][class],
                capacity_vph: [900.0, 1400.0, 2000.0][class],
                bidirectional: true,
            }
        })
        .collect();
    let graph = RoadGraph::new(nodes, edges).map_err(|e| e.to_string())?;

    let mut all: [Vec<u32>; 6] = Default::default();
    for (t, c) in category.iter().enumerate() {
        all[c.index()].push(t as u32);
    }
    let near = points
        .iter()
        .enumerate()
        .map(|(t, &(lat, lon))| {
            let mut lists: [Vec<u32>; 6] = Default::default();
            for (u, &(la, lo)) in points.iter().enumerate() {
                if u != t && haversine_m(lat, lon, la, lo) <= max_hop_m {
                    lists[category[u].index()].push(u as u32);
                }
            }
            lists
        })
        .collect();

    Ok(World {
        towers: TowerIndex::new(towers).map_err(|e| e.to_string())?,
        category,
        pois,
        graph,
        near,
        all,
    })
}
