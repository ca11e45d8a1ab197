use std::path::{Path, PathBuf};

use cdrtour::output::DirSink;
use cdrtour::synth::{generate, SynthConfig, TrafficModel};

/// A small synthetic world covering the default summer events.
pub fn small_config() -> SynthConfig {
    SynthConfig {
        n_subscribers: 400,
        n_towers: 30,
        n_road_edges: 60,
        traffic: TrafficModel {
            n_stations: 10,
            ..TrafficModel::default()
        },
        ..SynthConfig::default()
    }
}

pub fn write_world(dir: &Path) -> PathBuf {
    let mut sink = DirSink::new(dir).expect("world dir");
    generate(&small_config(), &mut sink).expect("synth");
    dir.join("run_config.json")
}
