use mendata_core::data::Dataset;
use mendata_core::detect::simulated_detect;
use mendata_core::extractor::FeatureExtractor;
use mendata_core::manip::{detect_marks, gen_marks, mark_inputs, CombineMethod};
use mendata_core::probe::{accuracy, train_probe, ProbeConfig};
use mendata_core::purify::{purify, PurifyConfig};
use mendata_core::rng::{streams, SeedStream};
use std::time::Instant;

fn centers(y_count: u32, dv: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedStream::new(seed, streams::DATA_GEN);
    (0..y_count).map(|_| (0..dv).map(|_| 0.5 + spread * rng.normal::<f64>()).collect()).collect()
}

fn clusters(centers: &[Vec<f64>], n_per: usize, sigma: f64, rng: &mut SeedStream) -> Dataset {
    let dv = centers[0].len();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (ci, center) in centers.iter().enumerate() {
        for _ in 0..n_per {
            for &c in center {
                inputs.push(((c + sigma * rng.normal::<f64>()).clamp(0.0, 1.0)) as f32);
            }
            labels.push(ci as u32 + 1);
        }
    }
    let n = labels.len();
    Dataset::new(inputs, labels, vec![false; n], dv, centers.len() as u32).unwrap()
}

fn main() {
    let dv = 64usize;
    let g = FeatureExtractor::<f64>::identity(dv);
    let probe_cfg = ProbeConfig { epochs: 400, lr: 0.05, batch_size: 64 };
    for &(m, cap) in &[(64usize, 2000usize), (96, 2400)] {
        let t0 = Instant::now();
        let mut fl_un = 0; let mut fl_pu = 0; let mut acc_un = 0.0; let mut acc_pu = 0.0;
        let mut p_un: Vec<f64> = Vec::new(); let mut p_pu: Vec<f64> = Vec::new();
        let trials = 10u64;
        for trial in 0..trials {
            let seed = 2000 + trial;
            let ctrs = centers(10, dv, 0.02, seed);
            let mut tr_rng = SeedStream::new(seed, streams::DATA_GEN);
            let mut te_rng = SeedStream::new(seed ^ 0xabcd, streams::NOISE);
            let d_clean = clusters(&ctrs, 100, 0.005, &mut tr_rng);
            let d_test = clusters(&ctrs, 20, 0.005, &mut te_rng);
            let mut mkrng = SeedStream::new(seed, streams::MARK_GEN);
            let ms = gen_marks::<f64>(10, dv, 0.1, 0.1, &mut mkrng).unwrap();
            let mut srng = SeedStream::new(seed, streams::MANIP_SELECT);
            let d_tr = mark_inputs(&d_clean, &ms, &g, 300, 0.05, 0.1, &mut srng).unwrap();

            let mut r1 = SeedStream::new(seed, streams::PROBE);
            let p1 = train_probe(&d_tr, &g, &probe_cfg, &mut r1).unwrap();
            let rep1 = detect_marks(&p1.weight_rows(), &ms, CombineMethod::Fisher).unwrap();
            if rep1.flagged { fl_un += 1; }
            p_un.push((rep1.combined_p * 1e4).round() / 1e4);
            acc_un += accuracy(&p1, &g, &d_test).unwrap();

            let mut drng = SeedStream::new(seed, streams::DETECTOR);
            let rf_idx = simulated_detect(&d_tr, 1.0, 0.1, &mut drng).unwrap();
            let rf_set: std::collections::HashSet<usize> = rf_idx.iter().copied().collect();
            let ut_idx: Vec<usize> = (0..d_tr.n()).filter(|i| !rf_set.contains(i)).collect();
            let d_rf = d_tr.subset(&rf_idx).unwrap();
            let d_ut = d_tr.subset(&ut_idx).unwrap();
            let cfg = PurifyConfig {
                eta_delta: 0.05, rho: 0.2, nu: 10.0, beta: 2.0, batch_size: m,
                checkpoint_interval: 150, max_inner_steps: cap, hidden: 128, eta_h: 2e-3,
                ..PurifyConfig::default()
            };
            let out = purify(&d_ut, &d_rf, &g, &cfg, seed).unwrap();
            let mut d_pf = d_tr.clone();
            for (pos, &orig) in ut_idx.iter().enumerate() {
                d_pf.set_input(orig, out.dataset.input(pos)).unwrap();
            }
            let mut r2 = SeedStream::new(seed, streams::PROBE);
            let p2 = train_probe(&d_pf, &g, &probe_cfg, &mut r2).unwrap();
            let rep2 = detect_marks(&p2.weight_rows(), &ms, CombineMethod::Fisher).unwrap();
            if rep2.flagged { fl_pu += 1; }
            p_pu.push((rep2.combined_p * 1e4).round() / 1e4);
            acc_pu += accuracy(&p2, &g, &d_test).unwrap();
        }
        println!(
            "m={m} cap={cap}: flagged {fl_un}/10 -> {fl_pu}/10, acc {:.3}->{:.3}, time={:?}\n  p_unpurified={p_un:?}\n  p_purified={p_pu:?}",
            acc_un / trials as f64, acc_pu / trials as f64, t0.elapsed()
        );
    }
}
