//! Road traffic from tower transitions, in three steps: a tower-to-tower
//! O-D matrix, all-or-nothing assignment onto shortest road paths, and a
//! least-squares scale from model movements to vehicle counts.

mod assign;
mod io;
mod od;
mod scale;

use thiserror::Error;

pub use assign::{
    assign_to_links, path_arcs, shortest_path_tree, snap_towers, Assignment, FlowKey, LinkFlows, ShortestPathTree,
    Snapping, UNREACHABLE,
};
pub use io::{read_link_flows, read_od, write_link_flows, write_od, LINK_FLOWS_HEADER, OD_HEADER};
pub use od::{build_od_matrix, OdKey, OdMatrix, SegmentFilter};
pub use scale::{edge_flows, fit_scale, peak_congestion, ExcludedStation, Peak, ScaleFit, ScaleResult, StationKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CongestionError {
    #[error("tower {0} unsnappable")]
    Unsnappable(String),
    #[error("road graph has no nodes")]
    EmptyGraph,
    #[error("tower {0} has no snapped road node")]
    MissingSnap(String),
    #[error("unidentifiable scale")]
    UnidentifiableScale,
}
