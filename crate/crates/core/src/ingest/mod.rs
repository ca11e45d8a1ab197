//! Parsing and validation of every external input file.
//!
//! CDR streams are read row by row into a compact [`CdrTable`]; reference
//! files (towers, road graph, POIs, traffic counts, TAC prices) are loaded
//! whole and cross-validated into a [`ReferenceBundle`].

mod cdr;
mod reference;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Instant;

pub(crate) use cdr::check_header;
pub use cdr::{
    parse_cdr_stream, read_cdr, read_cdr_table, write_cdr_header, write_cdr_row, CdrRow, ParseReport, Policy,
    Rejection, CDR_HEADER,
};
pub use reference::{
    load_reference, read_counts, read_pois, read_road_graph, read_tac_prices, read_towers, write_counts, write_pois,
    write_road_edges, write_road_nodes, write_tac_prices, write_towers, Direction, EdgeIdx, NodeIdx, Poi, PoiCategory,
    ReferenceBundle, ReferencePaths, RoadArc, RoadEdge, RoadGraph, RoadNode, TacPrice, TacPriceTable, Tower,
    TowerIndex, TrafficCount,
};
pub use table::{CdrTable, CdrTableBuilder, Row};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad header: expected `{expected}`, found `{found}`")]
    Header {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file} line {line}: {reason}")]
    Row { file: String, line: u64, reason: String },
    #[error("duplicate {kind} {id}")]
    Duplicate { kind: &'static str, id: String },
    #[error("{0}")]
    Integrity(String),
}

impl IngestError {
    pub(crate) fn io(file: &str, source: std::io::Error) -> IngestError {
        IngestError::Io {
            file: file.to_string(),
            source,
        }
    }

    pub(crate) fn csv(file: &str, err: csv::Error) -> IngestError {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(e) => IngestError::io(file, e),
            other => IngestError::Row {
                file: file.to_string(),
                line,
                reason: format!("{other:?}"),
            },
        }
    }
}

/// ISO 3166-1 alpha-2 registry country, two uppercase ASCII letters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Country([u8; 2]);

impl Country {
    pub fn new(code: &str) -> Option<Country> {
        match code.as_bytes() {
            &[a, b] if a.is_ascii_uppercase() && b.is_ascii_uppercase() => Some(Country([a, b])),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

impl FromStr for Country {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Country::new(s).ok_or_else(|| format!("bad country code `{s}`"))
    }
}

impl fmt::Display for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Country {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Country({})", self.as_str())
    }
}

impl Serialize for Country {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Country {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Type Allocation Code: the 8-digit IMEI prefix identifying a device model.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Tac(u32);

impl Tac {
    pub fn new(code: &str) -> Option<Tac> {
        if code.len() == 8 && code.bytes().all(|b| b.is_ascii_digit()) {
            code.parse().ok().map(Tac)
        } else {
            None
        }
    }

    pub(crate) fn from_raw(v: u32) -> Tac {
        Tac(v)
    }

    pub(crate) fn raw(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Tac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Service {
    Call,
    Sms,
    Data,
}

impl Service {
    pub fn parse(s: &str) -> Option<Service> {
        match s {
            "call" => Some(Service::Call),
            "sms" => Some(Service::Sms),
            "data" => Some(Service::Data),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Service::Call => "call",
            Service::Sms => "sms",
            Service::Data => "data",
        }
    }
}

/// One anonymized transaction.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CdrRecord {
    pub subscriber_id: String,
    pub timestamp: Instant,
    pub tower_id: String,
    pub registry_country: Country,
    pub tac: Option<Tac>,
    pub service: Service,
}
