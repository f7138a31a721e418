#![allow(dead_code)]

use std::path::Path;

use fsdiag::fixture::{self, FixtureSpec};
use fsdiag::pipeline::ExperimentConfig;

/// Planted fixture with short eval splits, plus a fast one-seed config over it.
pub fn small_fixture(dir: &Path) -> ExperimentConfig {
    let spec = FixtureSpec {
        n_test: 120,
        n_ood_test: 80,
        run_seeds: vec![1],
        ..FixtureSpec::default()
    };
    fixture::write(&spec, dir).unwrap();
    let mut config = fixture::experiment_config(&spec);
    config.ratios = vec![0.0, 1.0];
    config.explain.samples = 20;
    config.explain_sample_size = 40;
    config.hyper.epochs = 10;
    let path = dir.join("experiment.json");
    std::fs::write(&path, config.to_json()).unwrap();
    ExperimentConfig::load(&path).unwrap()
}
