use std::collections::BTreeMap;

use serde::Serialize;

use super::assign::{FlowKey, LinkFlows};
use super::CongestionError;
use crate::ingest::{EdgeIdx, RoadGraph, TrafficCount};
use crate::time::format_instant;

/// A count station observation point: one edge in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StationKey {
    pub window: i64,
    pub edge: EdgeIdx,
}

/// Model flow per (window, undirected edge): both directions summed, since
/// a count station sees the whole road.
pub fn edge_flows(flows: &LinkFlows, graph: &RoadGraph) -> BTreeMap<StationKey, u64> {
    let mut out = BTreeMap::new();
    for (k, f) in flows.cells() {
        let edge = graph.arcs()[k.arc].edge;
        *out.entry(StationKey { window: k.window, edge }).or_insert(0) += f;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleFit {
    pub beta: f64,
    pub rmse: f64,
    pub n_stations_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedStation {
    pub edge_id: String,
    pub window_start: String,
    pub vehicle_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleResult {
    /// Fit over all usable stations.
    pub pooled: ScaleFit,
    /// Per window start, present only in per-window mode and only for
    /// windows whose scale is identifiable.
    pub per_window: BTreeMap<String, ScaleFit>,
    /// Zero model flow but a nonzero count.
    pub excluded: Vec<ExcludedStation>,
    /// Counts whose window length or start does not match the flow windows.
    pub misaligned: usize,
    #[serde(skip)]
    window_betas: BTreeMap<i64, f64>,
}

impl ScaleResult {
    /// Per-window beta when fitted, else the pooled one.
    pub fn beta_for(&self, window: i64) -> f64 {
        self.window_betas.get(&window).copied().unwrap_or(self.pooled.beta)
    }
}

fn least_squares(points: &[(f64, f64)]) -> Option<ScaleFit> {
    let sff: f64 = points.iter().map(|(f, _)| f * f).sum();
    let scf: f64 = points.iter().map(|(f, c)| f * c).sum();
    if sff == 0.0 {
        return None;
    }
    let beta = scf / sff;
    if !(beta.is_finite() && beta > 0.0) {
        return None;
    }
    let sse: f64 = points.iter().map(|(f, c)| (beta * f - c).powi(2)).sum();
    Some(ScaleFit {
        beta,
        rmse: (sse / points.len() as f64).sqrt(),
        n_stations_used: points.len(),
    })
}

/// Least-squares scale through the origin from model flows to counts.
/// Stations with zero model flow and a nonzero count are excluded.
pub fn fit_scale(
    flows: &LinkFlows,
    graph: &RoadGraph,
    counts: &[TrafficCount],
    per_window: bool,
) -> Result<ScaleResult, CongestionError> {
    let model = edge_flows(flows, graph);
    let window_secs = i64::from(flows.window_minutes) * 60;
    let mut misaligned = 0;
    let mut excluded = Vec::new();
    let mut usable: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    for c in counts {
        let Some(edge) = graph.edge(&c.edge_id) else {
            misaligned += 1;
            continue;
        };
        if c.window_minutes != flows.window_minutes || c.window_start.rem_euclid(window_secs) != 0 {
            misaligned += 1;
            continue;
        }
        let window = c.window_start.div_euclid(window_secs);
        let f = model.get(&StationKey { window, edge }).copied().unwrap_or(0);
        if f == 0 && c.vehicle_count > 0 {
            excluded.push(ExcludedStation {
                edge_id: c.edge_id.clone(),
                window_start: format_instant(c.window_start),
                vehicle_count: c.vehicle_count,
            });
            continue;
        }
        usable
            .entry(window)
            .or_default()
            .push((f as f64, c.vehicle_count as f64));
    }
    excluded.sort_by(|a, b| (&a.window_start, &a.edge_id).cmp(&(&b.window_start, &b.edge_id)));

    let all: Vec<(f64, f64)> = usable.values().flatten().copied().collect();
    let pooled = least_squares(&all).ok_or(CongestionError::UnidentifiableScale)?;
    let mut window_betas = BTreeMap::new();
    let mut per = BTreeMap::new();
    if per_window {
        for (w, points) in &usable {
            if let Some(fit) = least_squares(points) {
                window_betas.insert(*w, fit.beta);
                per.insert(format_instant(w * window_secs), fit);
            }
        }
    }
    Ok(ScaleResult {
        pooled,
        per_window: per,
        excluded,
        misaligned,
        window_betas,
    })
}

/// Highest volume/capacity ratio over (arc, window).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub score: f64,
    /// `None` when there is no flow.
    pub at: Option<FlowKey>,
}

/// Scaled hourly volume over capacity, maximized over all cells. Equal
/// ratios resolve to the earliest window, then the smallest edge id.
pub fn peak_congestion(flows: &LinkFlows, beta: f64, graph: &RoadGraph) -> Peak {
    let per_hour = 60.0 / f64::from(flows.window_minutes);
    let mut best = Peak { score: 0.0, at: None };
    let mut best_key = (0i64, 0u32, crate::ingest::Direction::Forward);
    for (k, f) in flows.cells() {
        let arc = &graph.arcs()[k.arc];
        let ratio = beta * *f as f64 * per_hour / graph.edges()[arc.edge].capacity_vph;
        let key = (k.window, graph.edge_rank(arc.edge), arc.direction);
        if best.at.is_none() || ratio > best.score || (ratio == best.score && key < best_key) {
            best = Peak {
                score: ratio,
                at: Some(*k),
            };
            best_key = key;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ingest::{RoadEdge, RoadNode};

    fn graph(n_edges: usize, capacity: f64) -> RoadGraph {
        let nodes = (0..=n_edges)
            .map(|i| RoadNode {
                node_id: format!("N{i}"),
                lat: 42.5,
                lon: 1.5,
            })
            .collect();
        let edges = (0..n_edges)
            .map(|i| RoadEdge {
                edge_id: format!("E{i}"),
                from_node: format!("N{i}"),
                to_node: format!("N{}", i + 1),
                length_m: 1000.0,
                freeflow_kmh: 50.0,
                capacity_vph: capacity,
                bidirectional: true,
            })
            .collect();
        RoadGraph::new(nodes, edges).unwrap()
    }

    fn fwd(g: &RoadGraph, e: usize) -> usize {
        g.arc_of(e, crate::ingest::Direction::Forward).unwrap()
    }

    fn flows_on(g: &RoadGraph, window: i64, values: &[u64]) -> LinkFlows {
        LinkFlows::new(
            60,
            values
                .iter()
                .enumerate()
                .map(|(e, &f)| (FlowKey { window, arc: fwd(g, e) }, f))
                .collect(),
        )
    }

    fn count(e: usize, window: i64, c: u64) -> TrafficCount {
        TrafficCount {
            edge_id: format!("E{e}"),
            window_start: window * 3600,
            window_minutes: 60,
            vehicle_count: c,
        }
    }

    #[test]
    fn exact_proportionality() {
        let g = graph(2, 1000.0);
        let s = fit_scale(
            &flows_on(&g, 5, &[10, 20]),
            &g,
            &[count(0, 5, 30), count(1, 5, 60)],
            false,
        )
        .unwrap();
        assert_eq!(s.pooled.beta, 3.0);
        assert_eq!(s.pooled.rmse, 0.0);
        assert_eq!(s.pooled.n_stations_used, 2);
    }

    #[test]
    fn closed_form_residual() {
        let g = graph(2, 1000.0);
        let s = fit_scale(&flows_on(&g, 5, &[1, 1]), &g, &[count(0, 5, 2), count(1, 5, 4)], false).unwrap();
        assert_eq!(s.pooled.beta, 3.0);
        assert_eq!(s.pooled.rmse, 1.0);
    }

    #[test]
    fn single_point() {
        let g = graph(1, 1000.0);
        let s = fit_scale(&flows_on(&g, 5, &[5]), &g, &[count(0, 5, 20)], false).unwrap();
        assert_eq!(s.pooled.beta, 4.0);
    }

    #[test]
    fn both_directions_feed_one_station() {
        let g = graph(1, 1000.0);
        let rev = g.arc_of(0, crate::ingest::Direction::Reverse).unwrap();
        let flows = LinkFlows::new(
            60,
            vec![
                (
                    FlowKey {
                        window: 0,
                        arc: fwd(&g, 0),
                    },
                    3,
                ),
                (FlowKey { window: 0, arc: rev }, 2),
            ],
        );
        let s = fit_scale(&flows, &g, &[count(0, 0, 10)], false).unwrap();
        assert_eq!(s.pooled.beta, 2.0);
    }

    #[test]
    fn zero_flow_stations_are_excluded() {
        let g = graph(2, 1000.0);
        let s = fit_scale(&flows_on(&g, 0, &[5, 0]), &g, &[count(0, 0, 20), count(1, 0, 7)], false).unwrap();
        assert_eq!(s.pooled.n_stations_used, 1);
        assert_eq!(s.excluded.len(), 1);
        assert_eq!(s.excluded[0].edge_id, "E1");
    }

    #[test]
    fn unidentifiable() {
        let g = graph(1, 1000.0);
        let err = fit_scale(&LinkFlows::new(60, vec![]), &g, &[count(0, 0, 20)], false).unwrap_err();
        assert_eq!(err.to_string(), "unidentifiable scale");
        assert!(fit_scale(&flows_on(&g, 0, &[5]), &g, &[], false).is_err());
    }

    #[test]
    fn misaligned_counts_are_skipped() {
        let g = graph(1, 1000.0);
        let mut off = count(0, 0, 20);
        off.window_start += 60;
        let mut long = count(0, 0, 20);
        long.window_minutes = 120;
        let s = fit_scale(&flows_on(&g, 0, &[5]), &g, &[off, long, count(0, 0, 10)], false).unwrap();
        assert_eq!(s.misaligned, 2);
        assert_eq!(s.pooled.beta, 2.0);
    }

    #[test]
    fn per_window_betas() {
        let g = graph(1, 1000.0);
        let mut cells = flows_on(&g, 0, &[5]).cells().to_vec();
        cells.extend(flows_on(&g, 1, &[5]).cells());
        let flows = LinkFlows::new(60, cells);
        let s = fit_scale(&flows, &g, &[count(0, 0, 10), count(0, 1, 20)], true).unwrap();
        assert_eq!(s.beta_for(0), 2.0);
        assert_eq!(s.beta_for(1), 4.0);
        assert_eq!(s.beta_for(9), 3.0);
        assert_eq!(s.per_window.len(), 2);
    }

    #[test]
    fn peak_examples() {
        let g = graph(1, 100.0);
        let p = peak_congestion(&flows_on(&g, 0, &[50]), 1.0, &g);
        assert_eq!(p.score, 0.5);
        assert_eq!(
            peak_congestion(&LinkFlows::new(60, vec![]), 1.0, &g),
            Peak { score: 0.0, at: None }
        );

        let g = graph(2, 100.0);
        let p = peak_congestion(&flows_on(&g, 3, &[40, 90]), 1.0, &g);
        assert_eq!(p.score, 0.9);
        assert_eq!(p.at.unwrap().arc, fwd(&g, 1));
    }

    #[test]
    fn peak_ties_resolve_to_earliest_then_edge_id() {
        let g = graph(2, 100.0);
        let mut cells = flows_on(&g, 4, &[50, 50]).cells().to_vec();
        cells.extend(flows_on(&g, 7, &[50, 50]).cells());
        let p = peak_congestion(&LinkFlows::new(60, cells), 1.0, &g);
        assert_eq!(
            p.at,
            Some(FlowKey {
                window: 4,
                arc: fwd(&g, 0)
            })
        );
    }

    #[test]
    fn peak_scales_to_hourly_volume() {
        let g = graph(1, 100.0);
        let flows = LinkFlows::new(
            15,
            vec![(
                FlowKey {
                    window: 0,
                    arc: fwd(&g, 0),
                },
                10,
            )],
        );
        assert_eq!(peak_congestion(&flows, 2.0, &g).score, 0.8);
    }

    proptest! {
        #[test]
        fn planted_beta_is_recovered(
            flows in proptest::collection::vec(1u64..500, 1..12),
            beta in 1u64..50,
        ) {
            let g = graph(flows.len(), 1000.0);
            let counts: Vec<TrafficCount> = flows.iter().enumerate().map(|(e, f)| count(e, 2, beta * f)).collect();
            let s = fit_scale(&flows_on(&g, 2, &flows), &g, &counts, false).unwrap();
            prop_assert!((s.pooled.beta - beta as f64).abs() <= 1e-12 * beta as f64);
            prop_assert!(s.pooled.rmse <= 1e-9 * beta as f64);
        }
    }
}
