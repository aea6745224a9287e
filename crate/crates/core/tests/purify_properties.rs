//! Cross-module purification properties on small synthetic tasks.

use mendata_core::critic::{train_inner, Critic, InnerConfig};
use mendata_core::data::Dataset;
use mendata_core::extractor::FeatureExtractor;
use mendata_core::ot::exact_w1;
use mendata_core::purify::{purify, PurifyConfig};
use mendata_core::rng::{streams, SeedStream};

fn blob(center: f64, scale: f64, n: usize, seed: u64) -> Dataset {
    let mut rng = SeedStream::new(seed, streams::DATA_GEN);
    let inputs: Vec<f32> = (0..n)
        .map(|_| ((center + scale * rng.normal::<f64>()).clamp(0.0, 1.0)) as f32)
        .collect();
    Dataset::new(inputs, vec![1; n], vec![false; n], 1, 1).unwrap()
}

fn mean_abs_delta(delta: &[f64]) -> f64 {
    delta.iter().map(|d| d.abs()).sum::<f64>() / delta.len() as f64
}

/// More distribution mismatch must require larger perturbations: purifying
/// a matched sample needs smaller deltas than purifying a shifted one.
#[test]
fn mismatch_increases_perturbation_effort() {
    let cfg = PurifyConfig {
        eta_delta: 0.05,
        rho: 0.2,
        max_rounds: 8,
        batch_size: 16,
        checkpoint_interval: 4,
        max_inner_steps: 400,
        hidden: 32,
        ..PurifyConfig::default()
    };
    let g = FeatureExtractor::<f64>::identity(1);
    let mut matched_wins = 0;
    let seeds = 5u64;
    for s in 0..seeds {
        // two halves of one Gaussian sample vs a +0.5-shifted untrusted set
        let d_rf = blob(0.3, 0.03, 64, 100 + s);
        let d_same = blob(0.3, 0.03, 64, 200 + s);
        let d_shifted = blob(0.8, 0.03, 64, 200 + s);
        let same = purify(&d_same, &d_rf, &g, &cfg, 300 + s).unwrap();
        let shifted = purify(&d_shifted, &d_rf, &g, &cfg, 300 + s).unwrap();
        if mean_abs_delta(&same.state.delta) < mean_abs_delta(&shifted.state.delta) {
            matched_wins += 1;
        }
    }
    assert_eq!(matched_wins, seeds, "matched data should need smaller perturbations");
}

/// The converged critic gap tracks exact W1 between small Gaussian samples.
#[test]
fn critic_gap_tracks_exact_w1_on_small_pair() {
    let mut rng = SeedStream::new(77, streams::DATA_GEN);
    let n = 64;
    let mu = 0.5;
    let pe: Vec<Vec<f64>> = (0..n).map(|_| vec![mu + 0.01 * rng.normal::<f64>()]).collect();
    let rf: Vec<Vec<f64>> = (0..n).map(|_| vec![0.01 * rng.normal::<f64>()]).collect();
    let w1 = exact_w1(&pe, &rf).unwrap();

    let mut init = SeedStream::new(77, streams::CRITIC_INIT);
    let mut critic = Critic::<f64>::init(64, 1, &mut init);
    let cfg = InnerConfig {
        nu: 50.0,
        batch_size: 32,
        checkpoint_interval: 20,
        max_steps: 5000,
        ..InnerConfig::default()
    };
    let mut brng = SeedStream::new(77, streams::BATCH);
    let history = train_inner(&mut critic, &pe, &rf, &cfg, &mut brng).unwrap();
    let gap = *history.last().unwrap();
    assert!(
        ((gap - w1) / w1).abs() < 0.15,
        "gap {gap} should be within 15% of exact W1 {w1}"
    );
    // duality with slack for soft Lipschitz enforcement
    assert!(gap <= w1 * 1.02, "gap {gap} exceeds exact W1 {w1} beyond slack");
}

/// Purification leaves the reference-matched direction intact: labels,
/// flags, and domain hold on a two-blob task end to end.
#[test]
fn purify_full_contract_on_two_blob_task() {
    let d_ut = blob(0.7, 0.02, 48, 9);
    let d_rf = blob(0.3, 0.02, 48, 10);
    let g = FeatureExtractor::<f64>::identity(1);
    let cfg = PurifyConfig {
        eta_delta: 0.1,
        rho: 0.25,
        max_rounds: 10,
        batch_size: 16,
        checkpoint_interval: 4,
        max_inner_steps: 600,
        hidden: 32,
        ..PurifyConfig::default()
    };
    let before = exact_w1(
        &(0..d_ut.n()).map(|i| vec![f64::from(d_ut.input(i)[0])]).collect::<Vec<_>>(),
        &(0..d_rf.n()).map(|i| vec![f64::from(d_rf.input(i)[0])]).collect::<Vec<_>>(),
    )
    .unwrap();
    let out = purify(&d_ut, &d_rf, &g, &cfg, 11).unwrap();
    let after = exact_w1(
        &(0..out.dataset.n())
            .map(|i| vec![f64::from(out.dataset.input(i)[0])])
            .collect::<Vec<_>>(),
        &(0..d_rf.n()).map(|i| vec![f64::from(d_rf.input(i)[0])]).collect::<Vec<_>>(),
    )
    .unwrap();
    assert!(after < before, "purification should reduce W1 ({before} -> {after})");
    for i in 0..out.dataset.n() {
        assert_eq!(out.dataset.label(i), d_ut.label(i));
        assert_eq!(out.dataset.is_manipulated(i), d_ut.is_manipulated(i));
        for &v in out.dataset.input(i) {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    // diagnostics CSV round-trips through the emitter
    let csv = mendata_core::purify::diagnostics_csv(&out.diagnostics);
    assert_eq!(csv.lines().count(), out.diagnostics.len() + 1);
}
