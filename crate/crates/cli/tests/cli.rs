//! Integration tests for the command-line surface: exit codes, config
//! validation, report determinism, and the w1-check subcommand.

use std::path::{Path, PathBuf};
use std::process::Command;

use mendata_cli::config::load_config;
use mendata_cli::experiment::run_experiment;
use mendata_core::data::{save_dataset, Dataset};
use mendata_core::rng::{streams, SeedStream};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mendata"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mendata-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

const SMALL_MATCH_CONFIG: &str = r#"
[experiment]
scenario = "distribution_match"
trials = 2
seed_base = 5

[data]
n_per_class = 32

[purify]
eta_delta = 0.1
rho = 0.25
max_rounds = 3
batch_size = 8
checkpoint_interval = 3
max_inner_steps = 200
hidden = 16

[report]
w1_sample_cap = 32
"#;

#[test]
fn validate_succeeds_on_good_config_and_echoes_defaults() {
    let dir = tmp_dir("validate");
    let cfg = dir.join("good.toml");
    write(&cfg, SMALL_MATCH_CONFIG);
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed = String::from_utf8(out.stdout).unwrap();
    assert!(echoed.contains("\"nu\": 10.0"));
    assert!(echoed.contains("\"beta\": 2.0"));
    assert!(echoed.contains("\"max_rounds\": 3"));
}

#[test]
fn validate_exit_code_one_on_bad_config() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("bad.toml");
    write(&cfg, "[experiment]\nscenario = \"tracing\"\n[purify]\nrho = 2.0\nbeta = -1.0\n");
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("purify.rho"));
    assert!(err.contains("purify.beta"));
}

#[test]
fn run_exit_code_two_on_missing_config() {
    let out = bin().arg("run").arg("/nonexistent/path.toml").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_is_byte_deterministic_and_worker_independent() {
    let dir = tmp_dir("determinism");
    let cfg_path = dir.join("match.toml");
    write(&cfg_path, SMALL_MATCH_CONFIG);

    // identical config (including the output directory) run repeatedly
    let out_dir = dir.join("out");
    let run = |workers: &str| {
        let out = bin()
            .arg("run")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out_dir)
            .env("MENDATA_WORKERS", workers)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            std::fs::read(out_dir.join("report.json")).unwrap(),
            std::fs::read(out_dir.join("report.csv")).unwrap(),
        )
    };

    let (json1, csv1) = run("1");
    let (json2, csv2) = run("1");
    let (json3, csv3) = run("3");
    assert_eq!(json1, json2, "same seeds must give byte-identical reports");
    assert_eq!(csv1, csv2);
    assert_eq!(json1, json3, "worker count must not affect the report");
    assert_eq!(csv1, csv3);
}

#[test]
fn zero_round_purification_is_identity_in_the_report() {
    let dir = tmp_dir("noop");
    let cfg_path = dir.join("noop.toml");
    write(
        &cfg_path,
        r#"
[experiment]
scenario = "distribution_match"
trials = 1

[data]
n_per_class = 24

[purify]
max_rounds = 0
"#,
    );
    let cfg = load_config(&cfg_path, &[]).unwrap();
    let report = run_experiment(&cfg).unwrap();
    let t = &report.trials[0];
    assert_eq!(t.w1_before, t.w1_after);
    assert_eq!(t.mean_delta_l2, 0.0);
    assert_eq!(t.max_delta_linf, 0.0);
}

#[test]
fn zero_sigma_noise_baseline_matches_no_purification() {
    let dir = tmp_dir("sigma0");
    let base = r#"
[experiment]
scenario = "poison_backdoor"
trials = 1
seed_base = 9

[data]
n_per_class = 20
test_per_class = 5

[manipulation]
steps = 5
step_size = 0.01

[probe]
epochs = 10
lr = 0.1
"#;
    let with_noise = format!("{base}\n[baseline]\nkind = \"random_noise\"\nsigma = 0.0\n");
    let with_none = format!("{base}\n[baseline]\nkind = \"none\"\n");
    let p1 = dir.join("noise.toml");
    let p2 = dir.join("none.toml");
    write(&p1, &with_noise);
    write(&p2, &with_none);
    let r1 = run_experiment(&load_config(&p1, &[]).unwrap()).unwrap();
    let r2 = run_experiment(&load_config(&p2, &[]).unwrap()).unwrap();
    assert_eq!(r1.trials[0].accuracy_purified, r2.trials[0].accuracy_purified);
    assert_eq!(r1.trials[0].asr_purified, r2.trials[0].asr_purified);
}

#[test]
fn trial_seeds_are_stable_under_added_trials() {
    let dir = tmp_dir("seeds");
    let cfg_path = dir.join("match.toml");
    write(&cfg_path, SMALL_MATCH_CONFIG);
    let cfg2 = load_config(&cfg_path, &["experiment.trials=1".into()]).unwrap();
    let cfg3 = load_config(&cfg_path, &["experiment.trials=2".into()]).unwrap();
    let r2 = run_experiment(&cfg2).unwrap();
    let r3 = run_experiment(&cfg3).unwrap();
    // adding trials never perturbs earlier ones
    assert_eq!(
        serde_json::to_string(&r2.trials[0]).unwrap(),
        serde_json::to_string(&r3.trials[0]).unwrap()
    );
}

#[test]
fn w1_check_prints_exact_and_critic_estimates() {
    let dir = tmp_dir("w1check");
    let mut rng = SeedStream::new(3, streams::DATA_GEN);
    let mk = |center: f64, rng: &mut SeedStream| {
        let inputs: Vec<f32> = (0..64)
            .map(|_| ((center + 0.01 * rng.normal::<f64>()).clamp(0.0, 1.0)) as f32)
            .collect();
        Dataset::new(inputs, vec![1; 64], vec![false; 64], 1, 1).unwrap()
    };
    let a = mk(0.2, &mut rng);
    let b = mk(0.7, &mut rng);
    let pa = dir.join("a.mdat");
    let pb = dir.join("b.mdat");
    save_dataset(&a, &pa).unwrap();
    save_dataset(&b, &pb).unwrap();

    let out = bin()
        .arg("w1-check")
        .arg(&pa)
        .arg(&pb)
        .arg("identity:1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let exact: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("exact_w1 = "))
        .unwrap()
        .parse()
        .unwrap();
    let gap: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("critic_gap = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((exact - 0.5).abs() < 0.02, "exact {exact}");
    assert!(((gap - exact) / exact).abs() < 0.15, "gap {gap} vs exact {exact}");
}

#[test]
fn failed_trials_are_recorded_and_do_not_abort_the_run() {
    let dir = tmp_dir("failing");
    let cfg_path = dir.join("bad.toml");
    // recall so high the simulated detector cannot sample enough clean
    // inputs after poisoning wants more manipulated ones than exist
    write(
        &cfg_path,
        r#"
[experiment]
scenario = "poison_targeted"
trials = 2

[data]
n_per_class = 10
test_per_class = 2

[manipulation]
steps = 2
step_size = 0.0001
poison_fraction = 0.0

[detector]
q = 0.5
r = 1.0

[probe]
epochs = 2
"#,
    );
    let cfg = load_config(&cfg_path, &[]).unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.aggregate.failed_trials, 2);
    for t in &report.trials {
        let err = t.stage_error.as_ref().unwrap();
        assert!(err.contains("detector"), "{err}");
    }
}
