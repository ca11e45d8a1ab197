use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cdr::check_header;
use super::{IngestError, Tac};
use crate::time::{format_instant, parse_instant, Instant};

pub type NodeIdx = usize;
pub type EdgeIdx = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub tower_id: String,
    pub lat: f64,
    pub lon: f64,
    pub zone: Option<String>,
}

impl Tower {
    /// Zone label used for spatial aggregation: the zone if set, else the tower id.
    pub fn zone_label(&self) -> &str {
        self.zone.as_deref().unwrap_or(&self.tower_id)
    }
}

/// Towers with an id lookup.
#[derive(Debug, Clone, Default)]
pub struct TowerIndex {
    towers: Vec<Tower>,
    by_id: HashMap<String, usize>,
}

impl TowerIndex {
    pub fn new(towers: Vec<Tower>) -> Result<TowerIndex, IngestError> {
        let mut by_id = HashMap::with_capacity(towers.len());
        for (i, t) in towers.iter().enumerate() {
            check_coords(&t.tower_id, t.lat, t.lon)?;
            if by_id.insert(t.tower_id.clone(), i).is_some() {
                return Err(IngestError::Duplicate {
                    kind: "tower_id",
                    id: t.tower_id.clone(),
                });
            }
        }
        Ok(TowerIndex { towers, by_id })
    }

    pub fn towers(&self) -> &[Tower] {
        &self.towers
    }

    pub fn get(&self, id: &str) -> Option<&Tower> {
        self.by_id.get(id).map(|&i| &self.towers[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.towers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.towers.is_empty()
    }
}

fn check_coords(id: &str, lat: f64, lon: f64) -> Result<(), IngestError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(IngestError::Integrity(format!(
            "coordinates out of range for {id}: ({lat}, {lon})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNode {
    pub node_id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub edge_id: String,
    pub from_node: String,
    pub to_node: String,
    pub length_m: f64,
    pub freeflow_kmh: f64,
    pub capacity_vph: f64,
    pub bidirectional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Reverse => "rev",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "fwd" => Some(Direction::Forward),
            "rev" => Some(Direction::Reverse),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Directed traversal of one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadArc {
    pub edge: EdgeIdx,
    pub direction: Direction,
    pub from: NodeIdx,
    pub to: NodeIdx,
    /// Free-flow travel time, integer milliseconds (≥ 1).
    pub cost_ms: u64,
}

/// Directed road graph. Bidirectional edges expand into a forward and a
/// reverse arc sharing the edge id.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<RoadNode>,
    edges: Vec<RoadEdge>,
    node_index: HashMap<String, NodeIdx>,
    edge_index: HashMap<String, EdgeIdx>,
    node_rank: Vec<u32>,
    edge_rank: Vec<u32>,
    arcs: Vec<RoadArc>,
    // CSR adjacency: arcs leaving node n are out_arcs[out_start[n]..out_start[n + 1]].
    out_start: Vec<usize>,
    out_arcs: Vec<usize>,
}

fn ranks<T>(items: &[T], key: impl Fn(&T) -> &str) -> Vec<u32> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| key(&items[a]).cmp(key(&items[b])));
    let mut rank = vec![0u32; items.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u32;
    }
    rank
}

impl RoadGraph {
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<RoadGraph, IngestError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            check_coords(&n.node_id, n.lat, n.lon)?;
            if node_index.insert(n.node_id.clone(), i).is_some() {
                return Err(IngestError::Duplicate {
                    kind: "node_id",
                    id: n.node_id.clone(),
                });
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut arcs = Vec::with_capacity(edges.len() * 2);
        for (i, e) in edges.iter().enumerate() {
            if edge_index.insert(e.edge_id.clone(), i).is_some() {
                return Err(IngestError::Duplicate {
                    kind: "edge_id",
                    id: e.edge_id.clone(),
                });
            }
            let endpoint = |id: &str| {
                node_index
                    .get(id)
                    .copied()
                    .ok_or_else(|| IngestError::Integrity(format!("edge {} references unknown node {id}", e.edge_id)))
            };
            let from = endpoint(&e.from_node)?;
            let to = endpoint(&e.to_node)?;
            for (name, v) in [
                ("length_m", e.length_m),
                ("freeflow_kmh", e.freeflow_kmh),
                ("capacity_vph", e.capacity_vph),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(IngestError::Integrity(format!(
                        "edge {} has non-positive {name}",
                        e.edge_id
                    )));
                }
            }
            let cost_ms = ((e.length_m * 3600.0 / e.freeflow_kmh).round() as u64).max(1);
            arcs.push(RoadArc {
                edge: i,
                direction: Direction::Forward,
                from,
                to,
                cost_ms,
            });
            if e.bidirectional {
                arcs.push(RoadArc {
                    edge: i,
                    direction: Direction::Reverse,
                    from: to,
                    to: from,
                    cost_ms,
                });
            }
        }

        let node_rank = ranks(&nodes, |n| &n.node_id);
        let edge_rank = ranks(&edges, |e| &e.edge_id);
        let mut out_arcs: Vec<usize> = (0..arcs.len()).collect();
        out_arcs.sort_by_key(|&a| {
            let arc = &arcs[a];
            (arc.from, node_rank[arc.to], edge_rank[arc.edge], arc.direction)
        });
        let mut out_start = vec![0usize; nodes.len() + 1];
        for arc in &arcs {
            out_start[arc.from + 1] += 1;
        }
        for i in 0..nodes.len() {
            out_start[i + 1] += out_start[i];
        }

        Ok(RoadGraph {
            nodes,
            edges,
            node_index,
            edge_index,
            node_rank,
            edge_rank,
            arcs,
            out_start,
            out_arcs,
        })
    }

    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn arcs(&self) -> &[RoadArc] {
        &self.arcs
    }

    pub fn node(&self, id: &str) -> Option<NodeIdx> {
        self.node_index.get(id).copied()
    }

    pub fn edge(&self, id: &str) -> Option<EdgeIdx> {
        self.edge_index.get(id).copied()
    }

    /// Lexicographic rank of the node id among all node ids.
    pub fn node_rank(&self, n: NodeIdx) -> u32 {
        self.node_rank[n]
    }

    pub fn edge_rank(&self, e: EdgeIdx) -> u32 {
        self.edge_rank[e]
    }

    /// Arc indices leaving `n`, ordered by (head node id, edge id, direction).
    pub fn out_arcs(&self, n: NodeIdx) -> &[usize] {
        &self.out_arcs[self.out_start[n]..self.out_start[n + 1]]
    }

    /// Arc for (edge, direction), if that direction exists.
    pub fn arc_of(&self, edge: EdgeIdx, direction: Direction) -> Option<usize> {
        self.out_arcs(self.edge_from(edge, direction)?)
            .iter()
            .copied()
            .find(|&a| self.arcs[a].edge == edge && self.arcs[a].direction == direction)
    }

    fn edge_from(&self, edge: EdgeIdx, direction: Direction) -> Option<NodeIdx> {
        let e = self.edges.get(edge)?;
        match direction {
            Direction::Forward => self.node(&e.from_node),
            Direction::Reverse if e.bidirectional => self.node(&e.to_node),
            Direction::Reverse => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoiCategory {
    Shopping,
    Nature,
    Culture,
    Sports,
    Wellness,
    Other,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 6] = [
        PoiCategory::Shopping,
        PoiCategory::Nature,
        PoiCategory::Culture,
        PoiCategory::Sports,
        PoiCategory::Wellness,
        PoiCategory::Other,
    ];

    pub fn parse(s: &str) -> Option<PoiCategory> {
        PoiCategory::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Shopping => "shopping",
            PoiCategory::Nature => "nature",
            PoiCategory::Culture => "culture",
            PoiCategory::Sports => "sports",
            PoiCategory::Wellness => "wellness",
            PoiCategory::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub poi_id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: PoiCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficCount {
    pub edge_id: String,
    pub window_start: Instant,
    pub window_minutes: u32,
    pub vehicle_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TacPrice {
    pub brand: String,
    pub model: String,
    pub price_usd: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TacPriceTable {
    prices: BTreeMap<Tac, TacPrice>,
}

impl TacPriceTable {
    pub fn new(entries: impl IntoIterator<Item = (Tac, TacPrice)>) -> Result<TacPriceTable, IngestError> {
        let mut prices = BTreeMap::new();
        for (tac, p) in entries {
            if !(p.price_usd.is_finite() && p.price_usd >= 0.0) {
                return Err(IngestError::Integrity(format!("bad price for tac {tac}")));
            }
            if prices.insert(tac, p).is_some() {
                return Err(IngestError::Duplicate {
                    kind: "tac",
                    id: tac.to_string(),
                });
            }
        }
        Ok(TacPriceTable { prices })
    }

    pub fn get(&self, tac: Tac) -> Option<&TacPrice> {
        self.prices.get(&tac)
    }

    pub fn price(&self, tac: Tac) -> Option<f64> {
        self.get(tac).map(|p| p.price_usd)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tac, &TacPrice)> {
        self.prices.iter()
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

// Generic strict CSV table reader: exact header, then one closure call per row.
fn read_table<R: Read>(
    source: R,
    label: &str,
    header: &[&str],
    mut each: impl FnMut(&csv::StringRecord) -> Result<(), String>,
) -> Result<(), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rec = csv::ByteRecord::new();
    let has = reader
        .read_byte_record(&mut rec)
        .map_err(|e| IngestError::csv(label, e))?;
    check_header(label, has.then_some(&rec), header)?;
    for row in reader.records() {
        let row = row.map_err(|e| IngestError::csv(label, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let fail = |reason: String| IngestError::Row {
            file: label.to_string(),
            line,
            reason,
        };
        if row.len() != header.len() {
            return Err(fail("wrong field count".into()));
        }
        each(&row).map_err(fail)?;
    }
    Ok(())
}

fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {name} `{s}`"))
}

fn float(s: &str, name: &str) -> Result<f64, String> {
    let v: f64 = num(s, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("bad {name} `{s}`"))
    }
}

fn non_empty<'a>(s: &'a str, name: &str) -> Result<&'a str, String> {
    if s.is_empty() {
        Err(format!("empty {name}"))
    } else {
        Ok(s)
    }
}

pub fn read_towers<R: Read>(source: R, label: &str) -> Result<TowerIndex, IngestError> {
    let mut towers = Vec::new();
    read_table(source, label, &["tower_id", "lat", "lon", "zone"], |r| {
        towers.push(Tower {
            tower_id: non_empty(&r[0], "tower_id")?.to_string(),
            lat: float(&r[1], "lat")?,
            lon: float(&r[2], "lon")?,
            zone: (!r[3].is_empty()).then(|| r[3].to_string()),
        });
        Ok(())
    })?;
    TowerIndex::new(towers)
}

pub fn read_road_graph<R: Read, S: Read>(
    nodes: R,
    nodes_label: &str,
    edges: S,
    edges_label: &str,
) -> Result<RoadGraph, IngestError> {
    let mut node_list = Vec::new();
    read_table(nodes, nodes_label, &["node_id", "lat", "lon"], |r| {
        node_list.push(RoadNode {
            node_id: non_empty(&r[0], "node_id")?.to_string(),
            lat: float(&r[1], "lat")?,
            lon: float(&r[2], "lon")?,
        });
        Ok(())
    })?;
    let mut edge_list = Vec::new();
    read_table(
        edges,
        edges_label,
        &[
            "edge_id",
            "from_node",
            "to_node",
            "length_m",
            "freeflow_kmh",
            "capacity_vph",
            "bidirectional",
        ],
        |r| {
            let bidirectional = match &r[6] {
                "0" => false,
                "1" => true,
                other => return Err(format!("bad bidirectional `{other}`")),
            };
            edge_list.push(RoadEdge {
                edge_id: non_empty(&r[0], "edge_id")?.to_string(),
                from_node: r[1].to_string(),
                to_node: r[2].to_string(),
                length_m: float(&r[3], "length_m")?,
                freeflow_kmh: float(&r[4], "freeflow_kmh")?,
                capacity_vph: float(&r[5], "capacity_vph")?,
                bidirectional,
            });
            Ok(())
        },
    )?;
    RoadGraph::new(node_list, edge_list)
}

/// Reads POIs; returns them with the number of rows whose category was
/// unknown and mapped to `other`.
pub fn read_pois<R: Read>(source: R, label: &str) -> Result<(Vec<Poi>, usize), IngestError> {
    let mut pois = Vec::new();
    let mut unknown = 0;
    let mut seen = HashMap::new();
    read_table(source, label, &["poi_id", "lat", "lon", "category"], |r| {
        let category = PoiCategory::parse(&r[3]).unwrap_or_else(|| {
            unknown += 1;
            PoiCategory::Other
        });
        let poi = Poi {
            poi_id: non_empty(&r[0], "poi_id")?.to_string(),
            lat: float(&r[1], "lat")?,
            lon: float(&r[2], "lon")?,
            category,
        };
        if seen.insert(poi.poi_id.clone(), ()).is_some() {
            return Err(format!("duplicate poi_id {}", poi.poi_id));
        }
        pois.push(poi);
        Ok(())
    })?;
    for p in &pois {
        check_coords(&p.poi_id, p.lat, p.lon)?;
    }
    Ok((pois, unknown))
}

pub fn read_counts<R: Read>(source: R, label: &str) -> Result<Vec<TrafficCount>, IngestError> {
    let mut counts = Vec::new();
    read_table(
        source,
        label,
        &["edge_id", "window_start", "window_minutes", "vehicle_count"],
        |r| {
            let window_minutes: u32 = num(&r[2], "window_minutes")?;
            if window_minutes == 0 {
                return Err("window_minutes must be positive".into());
            }
            counts.push(TrafficCount {
                edge_id: non_empty(&r[0], "edge_id")?.to_string(),
                window_start: parse_instant(&r[1]).ok_or("bad window_start")?,
                window_minutes,
                vehicle_count: num(&r[3], "vehicle_count")?,
            });
            Ok(())
        },
    )?;
    Ok(counts)
}

pub fn read_tac_prices<R: Read>(source: R, label: &str) -> Result<TacPriceTable, IngestError> {
    let mut entries = Vec::new();
    read_table(source, label, &["tac", "brand", "model", "price_usd"], |r| {
        let tac = Tac::new(&r[0]).ok_or_else(|| format!("bad tac `{}`", &r[0]))?;
        let price_usd = float(&r[3], "price_usd")?;
        if price_usd < 0.0 {
            return Err("negative price_usd".into());
        }
        entries.push((
            tac,
            TacPrice {
                brand: r[1].to_string(),
                model: r[2].to_string(),
                price_usd,
            },
        ));
        Ok(())
    })?;
    TacPriceTable::new(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePaths {
    pub towers: PathBuf,
    pub road_nodes: PathBuf,
    pub road_edges: PathBuf,
    pub pois: PathBuf,
    pub counts: PathBuf,
    pub tac_prices: PathBuf,
}

/// Every reference dataset, cross-validated.
#[derive(Debug, Clone)]
pub struct ReferenceBundle {
    pub towers: TowerIndex,
    pub graph: RoadGraph,
    pub pois: Vec<Poi>,
    pub counts: Vec<TrafficCount>,
    pub tac_prices: TacPriceTable,
    /// POI rows whose category was unknown and mapped to `other`.
    pub unknown_poi_categories: usize,
}

impl ReferenceBundle {
    pub fn new(
        towers: TowerIndex,
        graph: RoadGraph,
        pois: Vec<Poi>,
        counts: Vec<TrafficCount>,
        tac_prices: TacPriceTable,
        unknown_poi_categories: usize,
    ) -> Result<ReferenceBundle, IngestError> {
        for c in &counts {
            if graph.edge(&c.edge_id).is_none() {
                return Err(IngestError::Integrity(format!(
                    "count references unknown edge {}",
                    c.edge_id
                )));
            }
        }
        Ok(ReferenceBundle {
            towers,
            graph,
            pois,
            counts,
            tac_prices,
            unknown_poi_categories,
        })
    }
}

fn open(path: &Path) -> Result<std::io::BufReader<File>, IngestError> {
    File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| IngestError::io(&path.display().to_string(), e))
}

pub fn load_reference(paths: &ReferencePaths) -> Result<ReferenceBundle, IngestError> {
    let label = |p: &Path| p.display().to_string();
    let towers = read_towers(open(&paths.towers)?, &label(&paths.towers))?;
    let graph = read_road_graph(
        open(&paths.road_nodes)?,
        &label(&paths.road_nodes),
        open(&paths.road_edges)?,
        &label(&paths.road_edges),
    )?;
    let (pois, unknown) = read_pois(open(&paths.pois)?, &label(&paths.pois))?;
    let counts = read_counts(open(&paths.counts)?, &label(&paths.counts))?;
    let tac_prices = read_tac_prices(open(&paths.tac_prices)?, &label(&paths.tac_prices))?;
    ReferenceBundle::new(towers, graph, pois, counts, tac_prices, unknown)
}

pub fn write_towers<W: Write>(w: W, towers: &[Tower]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["tower_id", "lat", "lon", "zone"])?;
    for t in towers {
        w.write_record([
            t.tower_id.as_str(),
            &format!("{:.6}", t.lat),
            &format!("{:.6}", t.lon),
            t.zone.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_road_nodes<W: Write>(w: W, nodes: &[RoadNode]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["node_id", "lat", "lon"])?;
    for n in nodes {
        w.write_record([n.node_id.as_str(), &format!("{:.6}", n.lat), &format!("{:.6}", n.lon)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_road_edges<W: Write>(w: W, edges: &[RoadEdge]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "edge_id",
        "from_node",
        "to_node",
        "length_m",
        "freeflow_kmh",
        "capacity_vph",
        "bidirectional",
    ])?;
    for e in edges {
        w.write_record([
            e.edge_id.as_str(),
            &e.from_node,
            &e.to_node,
            &format!("{:.1}", e.length_m),
            &format!("{}", e.freeflow_kmh),
            &format!("{}", e.capacity_vph),
            if e.bidirectional { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pois<W: Write>(w: W, pois: &[Poi]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["poi_id", "lat", "lon", "category"])?;
    for p in pois {
        w.write_record([
            p.poi_id.as_str(),
            &format!("{:.6}", p.lat),
            &format!("{:.6}", p.lon),
            p.category.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_counts<W: Write>(w: W, counts: &[TrafficCount]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["edge_id", "window_start", "window_minutes", "vehicle_count"])?;
    for c in counts {
        w.write_record([
            c.edge_id.as_str(),
            &format_instant(c.window_start),
            &c.window_minutes.to_string(),
            &c.vehicle_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tac_prices<W: Write>(w: W, table: &TacPriceTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["tac", "brand", "model", "price_usd"])?;
    for (tac, p) in table.iter() {
        w.write_record([
            tac.to_string().as_str(),
            &p.brand,
            &p.model,
            &format!("{:.2}", p.price_usd),
        ])?;
    }
    w.flush()?;
    Ok(())
}
