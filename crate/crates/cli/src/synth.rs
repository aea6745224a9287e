//! Synthetic scenario assets: per-scenario data generators, default
//! extractors, and manipulation targets.
//!
//! The poisoning task places ten tight classes along one input axis and
//! routes the other axis through a strongly amplifying linear extractor,
//! so a bounded feature-collision displacement becomes the dominant
//! feature-space anomaly (the regime where the critic's transport signal
//! is well above reference-sampling noise). The tracing task uses random
//! well-separated Gaussian classes in 64 dimensions with an identity
//! extractor.

use anyhow::{bail, Result};
use mendata_core::data::Dataset;
use mendata_core::extractor::FeatureExtractor;
use mendata_core::manip::TriggerSpec;
use mendata_core::rng::{streams, SeedStream};
use mendata_core::F;

use crate::config::{ExperimentConfig, Scenario};

/// Input-space amplification of the poisoning scenario's first axis.
pub const POISON_AMPLIFIER: f64 = 500.0;
/// Class spacing along the second axis of the poisoning scenario.
pub const POISON_CLASS_GAP: f64 = 0.1;
/// The poisoning target input: an ordinary class-2-level input with an
/// anomalous first coordinate, labeled with the attacker's class 1.
pub const POISON_TARGET_X: [f32; 2] = [0.555, 0.15];
pub const POISON_TARGET_LABEL: u32 = 1;

/// Backdoor scenario image layout (4x4 flattened to w=16).
pub const BACKDOOR_LAYOUT: (usize, usize) = (4, 4);
pub const BACKDOOR_TARGET_LABEL: u32 = 1;

/// Tracing scenario geometry: tight inter-class spread keeps the marks'
/// weight imprint from being swamped by class-geometry directions.
pub const TRACING_CENTER_SPREAD: f64 = 0.02;
pub const TRACING_CLUSTER_STD: f64 = 0.005;

/// Everything a trial needs before manipulation/detection/purification.
pub struct ScenarioAssets {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub extractor: FeatureExtractor<F>,
    /// Reference dataset for distribution matching (generated separately
    /// rather than detected).
    pub reference: Option<Dataset>,
    pub trigger: Option<TriggerSpec>,
}

pub fn input_dim(scenario: Scenario) -> usize {
    match scenario {
        Scenario::PoisonTargeted => 2,
        Scenario::PoisonBackdoor => BACKDOOR_LAYOUT.0 * BACKDOOR_LAYOUT.1,
        Scenario::Tracing => 64,
        Scenario::DistributionMatch => 1,
    }
}

fn clampf(x: f64) -> f32 {
    (x as f32).clamp(0.0, 1.0)
}

/// Ten classes stacked along the second axis; the first axis carries no
/// class information.
fn stacked_classes(n_per: usize, y_count: u32, rng: &mut SeedStream) -> Dataset {
    let mut inputs = Vec::with_capacity(n_per * y_count as usize * 2);
    let mut labels = Vec::with_capacity(n_per * y_count as usize);
    for y in 1..=y_count {
        let cy = 0.05 + POISON_CLASS_GAP * f64::from(y - 1);
        for _ in 0..n_per {
            inputs.push(clampf(0.5 + 1e-5 * rng.normal::<f64>()));
            inputs.push(clampf(cy + 1e-3 * rng.normal::<f64>()));
            labels.push(y);
        }
    }
    let n = labels.len();
    Dataset::new(inputs, labels, vec![false; n], 2, y_count).expect("stacked dataset")
}

/// Class centers drawn once per trial; train and test sets share them.
fn gaussian_centers(y_count: u32, dv: usize, spread: f64, rng: &mut SeedStream) -> Vec<Vec<f64>> {
    (0..y_count)
        .map(|_| (0..dv).map(|_| 0.5 + spread * rng.normal::<f64>()).collect())
        .collect()
}

/// Gaussian clusters around the given centers.
fn gaussian_clusters(
    centers: &[Vec<f64>],
    n_per: usize,
    sigma: f64,
    rng: &mut SeedStream,
) -> Dataset {
    let dv = centers[0].len();
    let mut inputs = Vec::with_capacity(n_per * centers.len() * dv);
    let mut labels = Vec::with_capacity(n_per * centers.len());
    for (ci, center) in centers.iter().enumerate() {
        for _ in 0..n_per {
            for &c in center {
                inputs.push(clampf(c + sigma * rng.normal::<f64>()));
            }
            labels.push(ci as u32 + 1);
        }
    }
    let n = labels.len();
    Dataset::new(inputs, labels, vec![false; n], dv, centers.len() as u32).expect("cluster dataset")
}

/// 4x4 "images": classes are encoded in the twelve coordinates outside
/// the top-left 2x2 patch region; class 1 deliberately sits at the global
/// centroid so its trigger is the only reliable evidence for it.
fn backdoor_images(n_per: usize, y_count: u32, rng: &mut SeedStream) -> Dataset {
    let (rows, cols) = BACKDOOR_LAYOUT;
    let w = rows * cols;
    let patch: [usize; 4] = [0, 1, cols, cols + 1];
    let mut inputs = Vec::with_capacity(n_per * y_count as usize * w);
    let mut labels = Vec::with_capacity(n_per * y_count as usize);
    for y in 1..=y_count {
        // class template over non-patch coordinates
        let mut template = vec![0.1f64; w];
        if y > 1 {
            let informative: Vec<usize> = (0..w).filter(|k| !patch.contains(k)).collect();
            for (j, &k) in informative.iter().enumerate() {
                let phase = f64::from(y - 1) * 0.7 + j as f64;
                template[k] = 0.5 + 0.35 * phase.sin();
            }
        } else {
            // class 1: centroid-like template, weak signature
            let informative: Vec<usize> = (0..w).filter(|k| !patch.contains(k)).collect();
            for &k in &informative {
                template[k] = 0.5;
            }
        }
        for _ in 0..n_per {
            for (k, &t) in template.iter().enumerate() {
                let noise = if patch.contains(&k) { 0.01 } else { 0.02 };
                inputs.push(clampf(t + noise * rng.normal::<f64>()));
            }
            labels.push(y);
        }
    }
    let n = labels.len();
    Dataset::new(inputs, labels, vec![false; n], w, y_count).expect("backdoor dataset")
}

/// Single-class blob used by the distribution-matching scenario.
pub fn blob(center: f64, scale: f64, n: usize, rng: &mut SeedStream) -> Dataset {
    let inputs: Vec<f32> = (0..n).map(|_| clampf(center + scale * rng.normal::<f64>())).collect();
    Dataset::new(inputs, vec![1; n], vec![false; n], 1, 1).expect("blob dataset")
}

/// The poisoning scenario's default extractor: amplify the first axis,
/// pass the class axis through.
pub fn poison_extractor() -> FeatureExtractor<F> {
    FeatureExtractor::linear(
        2,
        2,
        vec![POISON_AMPLIFIER, 0.0, 0.0, 1.0],
        vec![-POISON_AMPLIFIER / 2.0, 0.0],
    )
    .expect("poison extractor")
}

pub fn build_assets(cfg: &ExperimentConfig, seed: u64) -> Result<ScenarioAssets> {
    let mut data_rng = SeedStream::new(seed, streams::DATA_GEN);
    let mut test_rng = SeedStream::new(seed.wrapping_add(0x5eed), streams::DATA_GEN);

    let extractor: FeatureExtractor<F> = match (&cfg.extractor_path, cfg.scenario) {
        (Some(path), _) => mendata_core::extractor::load_extractor(path)?,
        (None, Scenario::PoisonTargeted) => poison_extractor(),
        (None, other) => FeatureExtractor::identity(input_dim(other)),
    };

    let assets = match cfg.scenario {
        Scenario::PoisonTargeted => {
            let train = match &cfg.dataset_path {
                Some(p) => mendata_core::data::load_dataset(p)?,
                None => stacked_classes(cfg.n_per_class, cfg.classes, &mut data_rng),
            };
            let test = stacked_classes(cfg.test_per_class, cfg.classes, &mut test_rng);
            ScenarioAssets { train, test: Some(test), extractor, reference: None, trigger: None }
        }
        Scenario::PoisonBackdoor => {
            let train = match &cfg.dataset_path {
                Some(p) => mendata_core::data::load_dataset(p)?,
                None => backdoor_images(cfg.n_per_class, cfg.classes, &mut data_rng),
            };
            let test = backdoor_images(cfg.test_per_class, cfg.classes, &mut test_rng);
            let size = cfg.trigger_size;
            let trigger = TriggerSpec {
                offset: (0, 0),
                size: (size, size),
                values: vec![cfg.trigger_value as f32; size * size],
            };
            ScenarioAssets {
                train,
                test: Some(test),
                extractor,
                reference: None,
                trigger: Some(trigger),
            }
        }
        Scenario::Tracing => {
            let centers = gaussian_centers(cfg.classes, 64, TRACING_CENTER_SPREAD, &mut data_rng);
            let train = match &cfg.dataset_path {
                Some(p) => mendata_core::data::load_dataset(p)?,
                None => gaussian_clusters(&centers, cfg.n_per_class, TRACING_CLUSTER_STD, &mut data_rng),
            };
            let test =
                gaussian_clusters(&centers, cfg.test_per_class, TRACING_CLUSTER_STD, &mut test_rng);
            ScenarioAssets { train, test: Some(test), extractor, reference: None, trigger: None }
        }
        Scenario::DistributionMatch => {
            let train = match &cfg.dataset_path {
                Some(p) => mendata_core::data::load_dataset(p)?,
                None => blob(0.7, 0.02, cfg.n_per_class, &mut data_rng),
            };
            let reference = blob(0.3, 0.02, cfg.n_per_class, &mut data_rng);
            ScenarioAssets { train, test: None, extractor, reference: Some(reference), trigger: None }
        }
    };

    if assets.extractor.input_dim() != assets.train.w() {
        bail!(
            "extractor input dimension {} does not match dataset w {}",
            assets.extractor.input_dim(),
            assets.train.w()
        );
    }
    Ok(assets)
}
