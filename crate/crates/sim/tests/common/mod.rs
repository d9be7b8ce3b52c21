#![allow(dead_code)]

use std::path::PathBuf;

use offload_core::sim::Scenario;
use offload_sim::scenario::{load_scenario, ScenarioFile};

pub fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub fn load(name: &str) -> Scenario {
    load_scenario(&bundled(name)).unwrap()
}

pub fn file(name: &str) -> ScenarioFile {
    let path = bundled(name);
    ScenarioFile::parse(&std::fs::read_to_string(&path).unwrap(), &path).unwrap()
}

/// A bundled scenario shrunk to `n` identical devices and `slots` slots.
pub fn small(name: &str, n: usize, slots: u64) -> Scenario {
    let mut f = file(name);
    f.devices.truncate(1);
    f.devices[0].count = n;
    f.slots = slots;
    f.compile(bundled(name).parent().unwrap()).unwrap()
}
