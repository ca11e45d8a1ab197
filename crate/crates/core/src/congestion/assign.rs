use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rayon::prelude::*;

use super::od::{merge_sorted, OdMatrix};
use super::CongestionError;
use crate::geo::haversine_m;
use crate::ingest::{NodeIdx, RoadGraph, TowerIndex};

/// Tower id → nearest road node.
pub type Snapping = BTreeMap<String, NodeIdx>;

/// Maps every tower to its nearest node by great-circle distance; equal
/// distances resolve to the lexicographically smallest node id.
pub fn snap_towers(towers: &TowerIndex, graph: &RoadGraph, max_snap_m: f64) -> Result<Snapping, CongestionError> {
    if graph.nodes().is_empty() {
        return Err(CongestionError::EmptyGraph);
    }
    let mut by_id: Vec<NodeIdx> = (0..graph.nodes().len()).collect();
    by_id.sort_by_key(|&n| graph.node_rank(n));
    let snapped: Vec<Result<(String, NodeIdx), CongestionError>> = towers
        .towers()
        .par_iter()
        .map(|t| {
            let mut best: Option<(f64, NodeIdx)> = None;
            for &n in &by_id {
                let node = &graph.nodes()[n];
                let d = haversine_m(t.lat, t.lon, node.lat, node.lon);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, n));
                }
            }
            match best {
                Some((d, n)) if d <= max_snap_m => Ok((t.tower_id.clone(), n)),
                _ => Err(CongestionError::Unsnappable(t.tower_id.clone())),
            }
        })
        .collect();
    snapped.into_iter().collect()
}

pub const UNREACHABLE: u64 = u64::MAX;

/// One-to-all shortest paths by free-flow travel time.
#[derive(Debug, Clone)]
pub struct ShortestPathTree {
    pub source: NodeIdx,
    /// Milliseconds; [`UNREACHABLE`] when no path exists.
    pub cost: Vec<u64>,
    pub hops: Vec<u32>,
    pub pred_arc: Vec<Option<usize>>,
}

impl ShortestPathTree {
    fn node_sequence(&self, graph: &RoadGraph, mut n: NodeIdx) -> Vec<u32> {
        let mut seq = vec![graph.node_rank(n)];
        while let Some(a) = self.pred_arc[n] {
            n = graph.arcs()[a].from;
            seq.push(graph.node_rank(n));
        }
        seq.reverse();
        seq
    }

    /// Whether reaching `v` through arc `cand` beats its current predecessor
    /// arc at equal (cost, hops).
    fn tie_wins(&self, graph: &RoadGraph, cand: usize, current: usize) -> bool {
        let (a, b) = (&graph.arcs()[cand], &graph.arcs()[current]);
        if a.from == b.from {
            return (graph.edge_rank(a.edge), a.direction) < (graph.edge_rank(b.edge), b.direction);
        }
        self.node_sequence(graph, a.from) < self.node_sequence(graph, b.from)
    }
}

/// Dijkstra from `source`. Ties on cost are broken by fewer hops, then by
/// the lexicographically smaller node-id sequence from the source, then by
/// edge id for parallel arcs.
pub fn shortest_path_tree(graph: &RoadGraph, source: NodeIdx) -> ShortestPathTree {
    let n = graph.nodes().len();
    let mut tree = ShortestPathTree {
        source,
        cost: vec![UNREACHABLE; n],
        hops: vec![u32::MAX; n],
        pred_arc: vec![None; n],
    };
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    tree.cost[source] = 0;
    tree.hops[source] = 0;
    heap.push(Reverse((0u64, 0u32, source)));

    while let Some(Reverse((cost, hops, u))) = heap.pop() {
        if done[u] || (cost, hops) != (tree.cost[u], tree.hops[u]) {
            continue;
        }
        done[u] = true;
        for &a in graph.out_arcs(u) {
            let arc = &graph.arcs()[a];
            let v = arc.to;
            if done[v] {
                continue;
            }
            let label = (cost + arc.cost_ms, hops + 1);
            match label.cmp(&(tree.cost[v], tree.hops[v])) {
                Ordering::Less => {
                    tree.cost[v] = label.0;
                    tree.hops[v] = label.1;
                    tree.pred_arc[v] = Some(a);
                    heap.push(Reverse((label.0, label.1, v)));
                }
                Ordering::Equal => {
                    let current = tree.pred_arc[v].expect("labelled node has a predecessor");
                    if tree.tie_wins(graph, a, current) {
                        tree.pred_arc[v] = Some(a);
                    }
                }
                Ordering::Greater => {}
            }
        }
    }
    tree
}

/// Arcs from the tree's source to `target`, in travel order. `None` when
/// unreachable; empty when `target` is the source.
pub fn path_arcs(graph: &RoadGraph, tree: &ShortestPathTree, target: NodeIdx) -> Option<Vec<usize>> {
    if tree.cost[target] == UNREACHABLE {
        return None;
    }
    let mut arcs = Vec::with_capacity(tree.hops[target] as usize);
    let mut n = target;
    while let Some(a) = tree.pred_arc[n] {
        arcs.push(a);
        n = graph.arcs()[a].from;
    }
    arcs.reverse();
    Some(arcs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub window: i64,
    /// Index into [`RoadGraph::arcs`].
    pub arc: usize,
}

/// Movement units per (window, directed arc), before scaling.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinkFlows {
    pub window_minutes: u32,
    // Sorted by key, all flows > 0.
    cells: Vec<(FlowKey, u64)>,
}

impl LinkFlows {
    pub fn new(window_minutes: u32, cells: Vec<(FlowKey, u64)>) -> LinkFlows {
        let mut cells = merge_sorted(cells);
        cells.retain(|c| c.1 > 0);
        LinkFlows { window_minutes, cells }
    }

    pub fn cells(&self) -> &[(FlowKey, u64)] {
        &self.cells
    }

    pub fn get(&self, window: i64, arc: usize) -> u64 {
        let key = FlowKey { window, arc };
        self.cells
            .binary_search_by(|c| c.0.cmp(&key))
            .map(|i| self.cells[i].1)
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    pub fn window_start(&self, window: i64) -> i64 {
        window * i64::from(self.window_minutes) * 60
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub flows: LinkFlows,
    /// O-D cells whose destination node cannot be reached.
    pub unreachable_pairs: u64,
    pub unreachable_movements: u64,
}

/// All-or-nothing assignment of every O-D cell onto its shortest path.
pub fn assign_to_links(od: &OdMatrix, graph: &RoadGraph, snapping: &Snapping) -> Result<Assignment, CongestionError> {
    let node_of: Vec<NodeIdx> = od
        .towers()
        .iter()
        .map(|t| {
            snapping
                .get(&**t)
                .copied()
                .ok_or_else(|| CongestionError::MissingSnap(t.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut by_origin: BTreeMap<NodeIdx, Vec<usize>> = BTreeMap::new();
    for (i, (k, _)) in od.cells().iter().enumerate() {
        by_origin.entry(node_of[k.from as usize]).or_default().push(i);
    }

    let per_origin: Vec<(Vec<(FlowKey, u64)>, u64, u64)> = by_origin
        .into_par_iter()
        .map(|(origin, cells)| {
            let tree = shortest_path_tree(graph, origin);
            let mut paths: HashMap<NodeIdx, Option<Vec<usize>>> = HashMap::new();
            let mut flows = Vec::new();
            let (mut bad_pairs, mut bad_moves) = (0, 0);
            for i in cells {
                let (k, count) = od.cells()[i];
                let dest = node_of[k.to as usize];
                let path = paths.entry(dest).or_insert_with(|| path_arcs(graph, &tree, dest));
                match path {
                    Some(arcs) => flows.extend(arcs.iter().map(|&arc| (FlowKey { window: k.window, arc }, count))),
                    None => {
                        bad_pairs += 1;
                        bad_moves += count;
                    }
                }
            }
            (flows, bad_pairs, bad_moves)
        })
        .collect();

    let mut cells = Vec::new();
    let (mut unreachable_pairs, mut unreachable_movements) = (0, 0);
    for (f, p, m) in per_origin {
        cells.extend(f);
        unreachable_pairs += p;
        unreachable_movements += m;
    }
    Ok(Assignment {
        flows: LinkFlows::new(od.window_minutes, cells),
        unreachable_pairs,
        unreachable_movements,
    })
}
