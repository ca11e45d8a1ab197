//! Run configuration: input paths and pipeline parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::AnalysisParams;
use crate::indicators::DayHours;
use crate::ingest::{Country, ReferencePaths};
use crate::time::UtcOffset;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("config {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cdr: PathBuf,
    pub towers: PathBuf,
    pub road_nodes: PathBuf,
    pub road_edges: PathBuf,
    pub pois: PathBuf,
    pub counts: PathBuf,
    pub tac_prices: PathBuf,
    pub events: Option<PathBuf>,
    pub out: PathBuf,
    pub home_country: String,
    pub utc_offset_minutes: i32,
    pub visit_gap_days: u32,
    pub window_minutes: u32,
    pub max_gap_minutes: u32,
    pub snap_max_m: f64,
    pub poi_radius_m: f64,
    /// Local `[start, end)` hours counted as daytime.
    pub day_hours: [u8; 2],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            cdr: "cdr.csv".into(),
            towers: "towers.csv".into(),
            road_nodes: "roads_nodes.csv".into(),
            road_edges: "roads_edges.csv".into(),
            pois: "pois.csv".into(),
            counts: "counts.csv".into(),
            tac_prices: "tac_prices.csv".into(),
            events: None,
            out: "out".into(),
            home_country: "AD".into(),
            utc_offset_minutes: 120,
            visit_gap_days: 2,
            window_minutes: 60,
            max_gap_minutes: 60,
            snap_max_m: 2000.0,
            poi_radius_m: 300.0,
            day_hours: [8, 20],
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        let cfg: RunConfig =
            serde_json::from_slice(&text).map_err(|source| ConfigError::Json { path: shown, source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.resolved(base))
    }

    pub fn resolved(mut self, base: &Path) -> RunConfig {
        for p in self.input_paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(e) = &mut self.events {
            if e.is_relative() {
                *e = base.join(&*e);
            }
        }
        if self.out.is_relative() {
            self.out = base.join(&self.out);
        }
        self
    }

    fn input_paths_mut(&mut self) -> [&mut PathBuf; 7] {
        [
            &mut self.cdr,
            &mut self.towers,
            &mut self.road_nodes,
            &mut self.road_edges,
            &mut self.pois,
            &mut self.counts,
            &mut self.tac_prices,
        ]
    }

    pub fn reference_paths(&self) -> ReferencePaths {
        ReferencePaths {
            towers: self.towers.clone(),
            road_nodes: self.road_nodes.clone(),
            road_edges: self.road_edges.clone(),
            pois: self.pois.clone(),
            counts: self.counts.clone(),
            tac_prices: self.tac_prices.clone(),
        }
    }

    pub fn home(&self) -> Result<Country, ConfigError> {
        Country::new(&self.home_country).ok_or_else(|| ConfigError::Invalid {
            field: "home_country",
            reason: format!("`{}` is not a 2-letter country code", self.home_country),
        })
    }

    pub fn offset(&self) -> UtcOffset {
        UtcOffset(self.utc_offset_minutes)
    }

    pub fn day_hours(&self) -> DayHours {
        DayHours {
            start: self.day_hours[0],
            end: self.day_hours[1],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, reason: &str| {
            Err(ConfigError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        self.home()?;
        if self.visit_gap_days == 0 {
            return invalid("visit_gap_days", "must be positive");
        }
        if self.window_minutes == 0 {
            return invalid("window_minutes", "must be positive");
        }
        if self.max_gap_minutes == 0 {
            return invalid("max_gap_minutes", "must be positive");
        }
        if !(self.snap_max_m.is_finite() && self.snap_max_m > 0.0) {
            return invalid("snap_max_m", "must be positive");
        }
        if !(self.poi_radius_m.is_finite() && self.poi_radius_m > 0.0) {
            return invalid("poi_radius_m", "must be positive");
        }
        if self.utc_offset_minutes.abs() >= 24 * 60 {
            return invalid("utc_offset_minutes", "must be within one day");
        }
        let [start, end] = self.day_hours;
        if start >= 24 || end >= 24 || start == end {
            return invalid("day_hours", "must be two distinct hours in 0..24");
        }
        let inputs = [
            &self.cdr,
            &self.towers,
            &self.road_nodes,
            &self.road_edges,
            &self.pois,
            &self.counts,
            &self.tac_prices,
        ];
        if inputs
            .iter()
            .chain(self.events.as_ref().iter())
            .any(|p| **p == self.out)
        {
            return invalid("out", "must differ from every input path");
        }
        Ok(())
    }

    pub fn analysis_params(&self) -> Result<AnalysisParams, ConfigError> {
        Ok(AnalysisParams {
            home_country: self.home()?,
            offset: self.offset(),
            visit_gap_days: self.visit_gap_days,
            window_minutes: self.window_minutes,
            max_gap_minutes: self.max_gap_minutes,
            snap_max_m: self.snap_max_m,
            day_hours: self.day_hours(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"cdr": "data/x.csv", "visit_gap_days": 3}"#).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.cdr, dir.path().join("data/x.csv"));
        assert_eq!(c.towers, dir.path().join("towers.csv"));
        assert_eq!(c.visit_gap_days, 3);
        assert_eq!(c.window_minutes, 60);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        c.window_minutes = 0;
        assert_eq!(
            c.validate().unwrap_err().to_string(),
            "config window_minutes: must be positive"
        );
        let mut c = RunConfig::default();
        c.out = c.cdr.clone();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.home_country = "Andorra".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"windows": 5}"#).is_err());
    }
}
