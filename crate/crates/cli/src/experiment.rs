//! End-to-end experiment orchestration: manipulate, detect reference data,
//! purify, train a probe, evaluate, aggregate. Trials are independent and
//! can run on multiple workers; the report is identical regardless of
//! worker count.

use std::collections::HashSet;
use std::time::Instant;

use anyhow::{Context, Result};

use mendata_core::data::Dataset;
use mendata_core::detect::{knn_kappa_detect, simulated_detect};
use mendata_core::extractor::FeatureExtractor;
use mendata_core::manip::{
    detect_marks, gen_marks, mark_inputs, patch_trigger, poison_feature_collision, CombineMethod,
};
use mendata_core::ot::exact_w1;
use mendata_core::probe::{
    accuracy, asr_backdoor, asr_targeted, random_noise_purify, train_probe, LinearProbe,
    ProbeConfig,
};
use mendata_core::purify::purify;
use mendata_core::rng::{streams, SeedStream};
use mendata_core::F;

use crate::config::{BaselineKind, DetectorKind, ExperimentConfig, Scenario};
use crate::report::{DetectionSummary, ExperimentReport, TrialRecord};
use crate::synth::{
    build_assets, BACKDOOR_LAYOUT, BACKDOOR_TARGET_LABEL, POISON_TARGET_LABEL, POISON_TARGET_X,
};

/// Worker-count environment variable.
pub const WORKERS_ENV: &str = "MENDATA_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Runs every trial and assembles the report. Trial errors abort only the
/// affected trial; the stage name is recorded and other trials continue.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let trials = cfg.trials;
    let workers = worker_count().min(trials.max(1));
    let mut records: Vec<(usize, TrialRecord, f64)> = Vec::with_capacity(trials);

    if workers <= 1 {
        for t in 0..trials {
            records.push(run_trial_recorded(cfg, t));
        }
    } else {
        let results = std::sync::Mutex::new(Vec::with_capacity(trials));
        std::thread::scope(|scope| {
            for worker in 0..workers {
                let results = &results;
                scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut t = worker;
                    while t < trials {
                        local.push(run_trial_recorded(cfg, t));
                        t += workers;
                    }
                    results.lock().unwrap().extend(local);
                });
            }
        });
        records = results.into_inner().unwrap();
    }

    records.sort_by_key(|(t, _, _)| *t);
    let timings: Vec<(usize, f64)> = records.iter().map(|(t, _, secs)| (*t, *secs)).collect();
    let trial_records: Vec<TrialRecord> = records.into_iter().map(|(_, r, _)| r).collect();
    Ok(ExperimentReport::assemble(cfg, trial_records, timings))
}

fn run_trial_recorded(cfg: &ExperimentConfig, trial: usize) -> (usize, TrialRecord, f64) {
    let start = Instant::now();
    let seed = cfg.seed_base.wrapping_add(trial as u64);
    let record = match run_trial(cfg, trial, seed) {
        Ok(r) => r,
        Err(e) => TrialRecord::failed(trial, seed, format!("{e:#}")),
    };
    (trial, record, start.elapsed().as_secs_f64())
}

fn features_of(g: &FeatureExtractor<F>, d: &Dataset) -> Result<Vec<Vec<F>>> {
    (0..d.n())
        .map(|i| {
            let row: Vec<F> = d.input(i).iter().map(|&v| f64::from(v)).collect();
            g.extract(&row).map_err(Into::into)
        })
        .collect()
}

/// Exact W1 between equal-size feature subsamples of the two datasets
/// (seeded subsample when either side exceeds the cap).
fn w1_between(
    g: &FeatureExtractor<F>,
    a: &Dataset,
    b: &Dataset,
    cap: usize,
    seed: u64,
) -> Result<f64> {
    let n = a.n().min(b.n()).min(cap);
    let mut rng = SeedStream::new(seed, streams::NOISE);
    let pick = |d: &Dataset, rng: &mut SeedStream| -> Vec<usize> {
        if d.n() <= n {
            (0..d.n()).collect()
        } else {
            let pool: Vec<usize> = (0..d.n()).collect();
            let mut s = rng.sample_without_replacement(&pool, n);
            s.sort_unstable();
            s
        }
    };
    let ia = pick(a, &mut rng);
    let ib = pick(b, &mut rng);
    let fa = features_of(g, &a.subset(&ia)?)?;
    let fb = features_of(g, &b.subset(&ib)?)?;
    Ok(exact_w1(&fa[..n.min(fa.len())], &fb[..n.min(fb.len())])?)
}

struct Purified {
    d_pf: Dataset,
    mean_delta_l2: f64,
    max_delta_linf: f64,
    rounds: usize,
}

/// Detects the reference set, purifies the rest (or applies the baseline),
/// and reassembles the full training set in original index order.
fn purify_training_set(
    cfg: &ExperimentConfig,
    d_tr: &Dataset,
    g: &FeatureExtractor<F>,
    seed: u64,
) -> Result<(Purified, Vec<usize>)> {
    let rf_idx: Vec<usize> = match cfg.detector {
        DetectorKind::Simulated => {
            let mut rng = SeedStream::new(seed, streams::DETECTOR);
            simulated_detect(d_tr, cfg.precision_q, cfg.recall_r, &mut rng)
                .context("simulated detector")?
        }
        DetectorKind::KnnKappa => {
            knn_kappa_detect(d_tr, g, cfg.knn_k, cfg.knn_kappa)
                .context("knn detector")?
                .indices
        }
    };
    let rf_set: HashSet<usize> = rf_idx.iter().copied().collect();
    let ut_idx: Vec<usize> = (0..d_tr.n()).filter(|i| !rf_set.contains(i)).collect();
    let d_rf = d_tr.subset(&rf_idx)?;
    let d_ut = d_tr.subset(&ut_idx)?;

    let purified = match cfg.baseline {
        BaselineKind::Mendata => {
            let out = purify(&d_ut, &d_rf, g, &cfg.purify.to_core(), seed).context("purify")?;
            let last = out.diagnostics.last();
            Purified {
                d_pf: reassemble(d_tr, &ut_idx, &out.dataset)?,
                mean_delta_l2: mean_delta(&out.dataset, &d_ut),
                max_delta_linf: max_delta(&out.dataset, &d_ut),
                rounds: last.map(|d| d.round).unwrap_or(0),
            }
        }
        BaselineKind::RandomNoise => {
            let mut rng = SeedStream::new(seed, streams::NOISE);
            let noisy = random_noise_purify(&d_ut, cfg.noise_sigma, &mut rng)?;
            Purified {
                d_pf: reassemble(d_tr, &ut_idx, &noisy)?,
                mean_delta_l2: mean_delta(&noisy, &d_ut),
                max_delta_linf: max_delta(&noisy, &d_ut),
                rounds: 0,
            }
        }
        BaselineKind::None => Purified {
            d_pf: d_tr.clone(),
            mean_delta_l2: 0.0,
            max_delta_linf: 0.0,
            rounds: 0,
        },
    };
    Ok((purified, ut_idx))
}

/// Puts purified untrusted rows back at their original indices, so every
/// index of the training set is covered by exactly one of D_rf and D_pe.
fn reassemble(d_tr: &Dataset, ut_idx: &[usize], purified: &Dataset) -> Result<Dataset> {
    let mut d_pf = d_tr.clone();
    for (pos, &orig) in ut_idx.iter().enumerate() {
        d_pf.set_input(orig, purified.input(pos))?;
    }
    Ok(d_pf)
}

fn mean_delta(after: &Dataset, before: &Dataset) -> f64 {
    (0..after.n())
        .map(|i| {
            after
                .input(i)
                .iter()
                .zip(before.input(i))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / after.n() as f64
}

fn max_delta(after: &Dataset, before: &Dataset) -> f64 {
    (0..after.n())
        .map(|i| {
            after
                .input(i)
                .iter()
                .zip(before.input(i))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
                .fold(0.0f64, f64::max)
        })
        .fold(0.0, f64::max)
}

fn train(cfg: &ExperimentConfig, d: &Dataset, g: &FeatureExtractor<F>, seed: u64) -> Result<LinearProbe<F>> {
    let probe_cfg = ProbeConfig {
        epochs: cfg.probe_epochs,
        lr: cfg.probe_lr,
        batch_size: cfg.probe_batch,
    };
    let mut rng = SeedStream::new(seed, streams::PROBE);
    Ok(train_probe(d, g, &probe_cfg, &mut rng)?)
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, seed: u64) -> Result<TrialRecord> {
    let assets = build_assets(cfg, seed).context("build scenario assets")?;
    let g = &assets.extractor;
    let mut record = TrialRecord::new(trial, seed);

    match cfg.scenario {
        Scenario::DistributionMatch => {
            let d_ut = assets.train;
            let d_rf = assets.reference.expect("distribution_match reference");
            record.w1_before =
                Some(w1_between(g, &d_ut, &d_rf, cfg.w1_sample_cap, seed).context("w1 before")?);
            let out = purify(&d_ut, &d_rf, g, &cfg.purify.to_core(), seed).context("purify")?;
            record.w1_after = Some(
                w1_between(g, &out.dataset, &d_rf, cfg.w1_sample_cap, seed).context("w1 after")?,
            );
            record.mean_delta_l2 = mean_delta(&out.dataset, &d_ut);
            record.max_delta_linf = max_delta(&out.dataset, &d_ut);
            record.purify_rounds = out.diagnostics.last().map(|d| d.round).unwrap_or(0);
        }
        Scenario::PoisonTargeted => {
            let d_clean = assets.train;
            let d_test = assets.test.expect("test set");
            let mut mrng = SeedStream::new(seed, streams::MANIP_SELECT);
            let d_tr = poison_feature_collision(
                &d_clean,
                &POISON_TARGET_X,
                POISON_TARGET_LABEL,
                cfg.poison_fraction,
                cfg.epsilon,
                g,
                cfg.manip_steps,
                cfg.manip_step_size,
                &mut mrng,
            )
            .context("feature-collision poisoning")?;
            let target = vec![(POISON_TARGET_X.to_vec(), POISON_TARGET_LABEL)];

            let p_unpurified = train(cfg, &d_tr, g, seed).context("train unpurified probe")?;
            record.accuracy_unpurified = Some(accuracy(&p_unpurified, g, &d_test)?);
            record.asr_unpurified = Some(asr_targeted(&p_unpurified, g, &target)?);

            let (purified, _) = purify_training_set(cfg, &d_tr, g, seed)?;
            record.w1_before =
                Some(w1_between(g, &d_tr, &d_clean, cfg.w1_sample_cap, seed).unwrap_or(f64::NAN));
            let p_purified =
                train(cfg, &purified.d_pf, g, seed).context("train purified probe")?;
            record.accuracy_purified = Some(accuracy(&p_purified, g, &d_test)?);
            record.asr_purified = Some(asr_targeted(&p_purified, g, &target)?);
            record.mean_delta_l2 = purified.mean_delta_l2;
            record.max_delta_linf = purified.max_delta_linf;
            record.purify_rounds = purified.rounds;
        }
        Scenario::PoisonBackdoor => {
            let d_clean = assets.train;
            let d_test = assets.test.expect("test set");
            let trigger = assets.trigger.expect("trigger");
            // clean-label backdoor stand-in: patch a fraction of the
            // target class so the trigger correlates with its label
            let mut mrng = SeedStream::new(seed, streams::MANIP_SELECT);
            let members = d_clean.class_indices(BACKDOOR_TARGET_LABEL);
            let take = (cfg.poison_fraction * members.len() as f64).floor() as usize;
            let mut d_tr = d_clean.clone();
            for &i in &mrng.sample_without_replacement(&members, take) {
                let patched = patch_trigger(d_clean.input(i), BACKDOOR_LAYOUT, &trigger)?;
                d_tr.set_input(i, &patched)?;
                d_tr.set_manipulated(i, true);
            }

            let p_unpurified = train(cfg, &d_tr, g, seed).context("train unpurified probe")?;
            record.accuracy_unpurified = Some(accuracy(&p_unpurified, g, &d_test)?);
            record.asr_unpurified = Some(asr_backdoor(
                &p_unpurified,
                g,
                &d_test,
                BACKDOOR_LAYOUT,
                &trigger,
                BACKDOOR_TARGET_LABEL,
            )?);

            let (purified, _) = purify_training_set(cfg, &d_tr, g, seed)?;
            let p_purified =
                train(cfg, &purified.d_pf, g, seed).context("train purified probe")?;
            record.accuracy_purified = Some(accuracy(&p_purified, g, &d_test)?);
            record.asr_purified = Some(asr_backdoor(
                &p_purified,
                g,
                &d_test,
                BACKDOOR_LAYOUT,
                &trigger,
                BACKDOOR_TARGET_LABEL,
            )?);
            record.mean_delta_l2 = purified.mean_delta_l2;
            record.max_delta_linf = purified.max_delta_linf;
            record.purify_rounds = purified.rounds;
        }
        Scenario::Tracing => {
            let d_clean = assets.train;
            let d_test = assets.test.expect("test set");
            let mut mkrng = SeedStream::new(seed, streams::MARK_GEN);
            let marks = gen_marks::<F>(
                d_clean.y_count() as usize,
                g.feature_dim(),
                cfg.mark_fraction,
                cfg.epsilon,
                &mut mkrng,
            )?;
            let mut srng = SeedStream::new(seed, streams::MANIP_SELECT);
            let d_tr = mark_inputs(
                &d_clean,
                &marks,
                g,
                cfg.manip_steps,
                cfg.manip_step_size,
                cfg.mark_gamma,
                &mut srng,
            )
            .context("radioactive marking")?;

            let p_unpurified = train(cfg, &d_tr, g, seed).context("train unpurified probe")?;
            record.accuracy_unpurified = Some(accuracy(&p_unpurified, g, &d_test)?);
            let rep = detect_marks(&p_unpurified.weight_rows(), &marks, CombineMethod::Fisher)?;
            record.detection_unpurified = Some(DetectionSummary::from_report(&rep));

            let (purified, _) = purify_training_set(cfg, &d_tr, g, seed)?;
            let p_purified =
                train(cfg, &purified.d_pf, g, seed).context("train purified probe")?;
            record.accuracy_purified = Some(accuracy(&p_purified, g, &d_test)?);
            let rep = detect_marks(&p_purified.weight_rows(), &marks, CombineMethod::Fisher)?;
            record.detection_purified = Some(DetectionSummary::from_report(&rep));
            record.mean_delta_l2 = purified.mean_delta_l2;
            record.max_delta_linf = purified.max_delta_linf;
            record.purify_rounds = purified.rounds;
        }
    }
    Ok(record)
}
