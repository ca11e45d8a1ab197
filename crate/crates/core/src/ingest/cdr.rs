use std::io::{Read, Write};

use serde::Serialize;

use super::table::{CdrTable, CdrTableBuilder};
use super::{CdrRecord, Country, IngestError, Service, Tac};
use crate::time::{format_instant, parse_instant, Instant};

pub const CDR_HEADER: [&str; 6] = [
    "subscriber_id",
    "timestamp",
    "tower_id",
    "registry_country",
    "tac",
    "service",
];

const MAX_REASONS: usize = 100;

/// What to do with a malformed CDR row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    FailFast,
    #[default]
    SkipAndCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub rows_read: u64,
    pub rows_rejected: u64,
    /// First 100 rejections, in file order.
    pub rejections: Vec<Rejection>,
}

impl ParseReport {
    pub fn rows_accepted(&self) -> u64 {
        self.rows_read - self.rows_rejected
    }
}

/// A validated CDR row borrowing its text fields from the reader buffer.
#[derive(Debug, Clone, Copy)]
pub struct CdrRow<'a> {
    pub subscriber_id: &'a str,
    pub timestamp: Instant,
    pub tower_id: &'a str,
    pub registry_country: Country,
    pub tac: Option<Tac>,
    pub service: Service,
}

impl CdrRow<'_> {
    pub fn to_record(&self) -> CdrRecord {
        CdrRecord {
            subscriber_id: self.subscriber_id.to_string(),
            timestamp: self.timestamp,
            tower_id: self.tower_id.to_string(),
            registry_country: self.registry_country,
            tac: self.tac,
            service: self.service,
        }
    }
}

fn field(rec: &csv::ByteRecord, i: usize) -> Result<&str, &'static str> {
    std::str::from_utf8(&rec[i]).map_err(|_| "invalid utf-8")
}

fn parse_row(rec: &csv::ByteRecord) -> Result<CdrRow<'_>, &'static str> {
    if rec.len() != CDR_HEADER.len() {
        return Err("wrong field count");
    }
    let subscriber_id = field(rec, 0)?;
    if subscriber_id.is_empty() {
        return Err("empty subscriber_id");
    }
    let timestamp = parse_instant(field(rec, 1)?).ok_or("bad timestamp")?;
    let tower_id = field(rec, 2)?;
    if tower_id.is_empty() {
        return Err("empty tower_id");
    }
    let registry_country = Country::new(field(rec, 3)?).ok_or("bad registry_country")?;
    let tac = match field(rec, 4)? {
        "" => None,
        s => Some(Tac::new(s).ok_or("bad tac")?),
    };
    let service = Service::parse(field(rec, 5)?).ok_or("bad service")?;
    Ok(CdrRow {
        subscriber_id,
        timestamp,
        tower_id,
        registry_country,
        tac,
        service,
    })
}

pub(crate) fn check_header(file: &str, found: Option<&csv::ByteRecord>, expected: &[&str]) -> Result<(), IngestError> {
    let ok = found.is_some_and(|h| h.len() == expected.len() && h.iter().zip(expected).all(|(a, b)| a == b.as_bytes()));
    if ok {
        return Ok(());
    }
    let found = found
        .map(|h| {
            h.iter()
                .map(|f| String::from_utf8_lossy(f).into_owned())
                .collect::<Vec<_>>()
                .join(",")
        })
        .unwrap_or_default();
    Err(IngestError::Header {
        file: file.to_string(),
        expected: expected.join(","),
        found,
    })
}

/// Streams a CDR CSV, handing each valid row to `sink` in file order.
pub fn read_cdr<R: Read>(
    source: R,
    label: &str,
    policy: Policy,
    mut sink: impl FnMut(CdrRow<'_>),
) -> Result<ParseReport, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .buffer_capacity(1 << 20)
        .from_reader(source);
    let mut rec = csv::ByteRecord::new();
    let mut report = ParseReport::default();

    let has_header = reader
        .read_byte_record(&mut rec)
        .map_err(|e| IngestError::csv(label, e))?;
    check_header(label, has_header.then_some(&rec), &CDR_HEADER)?;

    loop {
        match reader.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(IngestError::csv(label, e)),
        }
        report.rows_read += 1;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&rec) {
            Ok(row) => sink(row),
            Err(reason) => {
                if policy == Policy::FailFast {
                    return Err(IngestError::Row {
                        file: label.to_string(),
                        line,
                        reason: reason.to_string(),
                    });
                }
                report.rows_rejected += 1;
                if report.rejections.len() < MAX_REASONS {
                    report.rejections.push(Rejection {
                        line,
                        reason: reason.to_string(),
                    });
                }
            }
        }
    }
    Ok(report)
}

pub fn parse_cdr_stream<R: Read>(source: R, policy: Policy) -> Result<(Vec<CdrRecord>, ParseReport), IngestError> {
    let mut out = Vec::new();
    let report = read_cdr(source, "cdr", policy, |row| out.push(row.to_record()))?;
    Ok((out, report))
}

pub fn read_cdr_table<R: Read>(source: R, label: &str, policy: Policy) -> Result<(CdrTable, ParseReport), IngestError> {
    let mut builder = CdrTableBuilder::new();
    let report = read_cdr(source, label, policy, |row| builder.push(&row))?;
    Ok((builder.finish(), report))
}

pub fn write_cdr_header<W: Write>(w: &mut csv::Writer<W>) -> csv::Result<()> {
    w.write_record(CDR_HEADER)
}

pub fn write_cdr_row<W: Write>(w: &mut csv::Writer<W>, rec: &CdrRecord) -> csv::Result<()> {
    let tac = rec.tac.map(|t| t.to_string()).unwrap_or_default();
    w.write_record([
        rec.subscriber_id.as_str(),
        &format_instant(rec.timestamp),
        &rec.tower_id,
        rec.registry_country.as_str(),
        &tac,
        rec.service.as_str(),
    ])
}
