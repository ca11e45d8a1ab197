//! Tourism indicators and event scorecards from anonymized call detail records.

pub mod config;
pub mod congestion;
pub mod economics;
pub mod events;
pub mod geo;
pub mod indicators;
pub mod ingest;
pub mod mobility;
pub mod output;
pub mod synth;
pub mod time;
