//! Configuration-driven experiment orchestration around the purification
//! core: scenario generators, detector/purifier/probe pipelines, and
//! reproducible reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod synth;

#[cfg(test)]
pub(crate) fn config_fixture() -> config::ExperimentConfig {
    config::ExperimentConfig {
        scenario: config::Scenario::DistributionMatch,
        trials: 1,
        seed_base: 1,
        output_dir: std::path::PathBuf::from("out"),
        dataset_path: None,
        n_per_class: 16,
        classes: 1,
        test_per_class: 4,
        extractor_path: None,
        epsilon: 16.0 / 255.0,
        poison_fraction: 0.1,
        mark_fraction: 0.1,
        manip_steps: 10,
        manip_step_size: 0.01,
        mark_gamma: 0.1,
        trigger_size: 2,
        trigger_value: 0.9,
        detector: config::DetectorKind::Simulated,
        precision_q: 1.0,
        recall_r: 0.1,
        knn_k: 5,
        knn_kappa: 3,
        purify: config::PurifySettings::default(),
        baseline: config::BaselineKind::Mendata,
        noise_sigma: 16.0,
        probe_epochs: 5,
        probe_lr: 0.1,
        probe_batch: 64,
        w1_sample_cap: 64,
    }
}
