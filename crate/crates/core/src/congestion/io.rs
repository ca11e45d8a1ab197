use std::io::{Read, Write};

use super::assign::{FlowKey, LinkFlows};
use super::od::OdMatrix;
use super::scale::ScaleResult;
use crate::ingest::{check_header, Direction, IngestError, RoadGraph};
use crate::time::{format_instant, parse_instant};

pub const OD_HEADER: [&str; 4] = ["window_start", "from_tower", "to_tower", "count"];
pub const LINK_FLOWS_HEADER: [&str; 6] = ["window_start", "edge_id", "direction", "flow", "scaled_vph", "vc_ratio"];

pub fn write_od<W: Write>(w: W, od: &OdMatrix) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(OD_HEADER)?;
    for (window, from, to, count) in od.iter_named() {
        w.write_record([&format_instant(od.window_start(window)), from, to, &count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn records<R: Read>(
    source: R,
    label: &str,
    header: &[&str],
    mut each: impl FnMut(&csv::StringRecord) -> Result<(), String>,
) -> Result<(), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut first = csv::ByteRecord::new();
    let has = reader
        .read_byte_record(&mut first)
        .map_err(|e| IngestError::csv(label, e))?;
    check_header(label, has.then_some(&first), header)?;
    for row in reader.records() {
        let row = row.map_err(|e| IngestError::csv(label, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let result = if row.len() == header.len() {
            each(&row)
        } else {
            Err("wrong field count".into())
        };
        result.map_err(|reason| IngestError::Row {
            file: label.to_string(),
            line,
            reason,
        })?;
    }
    Ok(())
}

fn window_index(s: &str, window_secs: i64) -> Result<i64, String> {
    let ts = parse_instant(s).ok_or("bad window_start")?;
    if ts.rem_euclid(window_secs) != 0 {
        return Err("window_start not aligned to window length".into());
    }
    Ok(ts.div_euclid(window_secs))
}

/// Reads `od.csv` written with windows of `window_minutes`.
pub fn read_od<R: Read>(source: R, label: &str, window_minutes: u32) -> Result<OdMatrix, IngestError> {
    let window_secs = i64::from(window_minutes) * 60;
    let mut cells = Vec::new();
    records(source, label, &OD_HEADER, |r| {
        let window = window_index(&r[0], window_secs)?;
        if r[1].is_empty() || r[2].is_empty() {
            return Err("empty tower id".into());
        }
        let count: u64 = r[3].parse().map_err(|_| format!("bad count `{}`", &r[3]))?;
        cells.push((window, r[1].to_string(), r[2].to_string(), count));
        Ok(())
    })?;
    Ok(OdMatrix::from_named(window_minutes, cells))
}

/// Writes flows in (window, edge id, direction) order. Scaled columns are
/// filled when a scale is given and left empty otherwise.
pub fn write_link_flows<W: Write>(
    w: W,
    flows: &LinkFlows,
    graph: &RoadGraph,
    scale: Option<&ScaleResult>,
) -> csv::Result<()> {
    let mut rows: Vec<(&FlowKey, u64)> = flows.cells().iter().map(|(k, f)| (k, *f)).collect();
    rows.sort_by_key(|(k, _)| {
        let arc = &graph.arcs()[k.arc];
        (k.window, graph.edge_rank(arc.edge), arc.direction)
    });
    let per_hour = 60.0 / f64::from(flows.window_minutes);
    let mut w = csv::Writer::from_writer(w);
    w.write_record(LINK_FLOWS_HEADER)?;
    for (k, f) in rows {
        let arc = &graph.arcs()[k.arc];
        let edge = &graph.edges()[arc.edge];
        let (vph, vc) = match scale {
            Some(s) => {
                let vph = s.beta_for(k.window) * f as f64 * per_hour;
                (format!("{vph:.6}"), format!("{:.6}", vph / edge.capacity_vph))
            }
            None => (String::new(), String::new()),
        };
        w.write_record([
            &format_instant(flows.window_start(k.window)),
            edge.edge_id.as_str(),
            arc.direction.as_str(),
            &f.to_string(),
            &vph,
            &vc,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads unscaled flows back from `link_flows.csv`; scaled columns are ignored.
pub fn read_link_flows<R: Read>(
    source: R,
    label: &str,
    graph: &RoadGraph,
    window_minutes: u32,
) -> Result<LinkFlows, IngestError> {
    let window_secs = i64::from(window_minutes) * 60;
    let mut cells = Vec::new();
    records(source, label, &LINK_FLOWS_HEADER, |r| {
        let window = window_index(&r[0], window_secs)?;
        let edge = graph.edge(&r[1]).ok_or_else(|| format!("unknown edge {}", &r[1]))?;
        let dir = Direction::parse(&r[2]).ok_or_else(|| format!("bad direction `{}`", &r[2]))?;
        let arc = graph
            .arc_of(edge, dir)
            .ok_or_else(|| format!("edge {} has no {} arc", &r[1], dir))?;
        let flow: u64 = r[3].parse().map_err(|_| format!("bad flow `{}`", &r[3]))?;
        cells.push((FlowKey { window, arc }, flow));
        Ok(())
    })?;
    Ok(LinkFlows::new(window_minutes, cells))
}
