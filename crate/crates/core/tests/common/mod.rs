#![allow(dead_code)]

use std::path::PathBuf;

use m3_core::benchmark::{Benchmark, SynthSpec};
use m3_core::trainer::TrainConfig;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn bench(name: &str) -> Benchmark {
    let spec = SynthSpec::load(fixture(&format!("{name}.json"))).expect("fixture spec");
    Benchmark::generate(&spec).expect("fixture generates")
}

pub fn train_config() -> TrainConfig {
    let text = std::fs::read_to_string(fixture("train_config.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Worker count for long runs; results do not depend on it.
pub fn jobs() -> usize {
    std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8)
}
