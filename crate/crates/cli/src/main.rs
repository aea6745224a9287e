use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mendata_cli::config::{load_config, ConfigError};
use mendata_cli::experiment::run_experiment;
use mendata_core::critic::{train_inner, Critic, InnerConfig};
use mendata_core::data::load_dataset;
use mendata_core::extractor::{load_extractor, FeatureExtractor};
use mendata_core::ot::exact_w1;
use mendata_core::rng::{streams, SeedStream};
use mendata_core::F;

#[derive(Parser)]
#[command(name = "mendata", about = "Training-data purification experiments", version)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dotted-path overrides, e.g. --override purify.rho=0.1
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Validate a config and echo the resolved values.
    Validate {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare exact (assignment-based) and critic-estimated W1 between
    /// the feature distributions of two datasets.
    W1Check {
        dataset_a: PathBuf,
        dataset_b: PathBuf,
        /// Extractor file path, or `identity:<w>` for the identity map.
        extractor: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
}

fn classify(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
        other => Failure::Validation(other.to_string()),
    }
}

fn dispatch() -> Result<(), Failure> {
    let args = Args::parse();
    match args.command {
        Command::Run { config, trials, out, mut overrides } => {
            if let Some(t) = trials {
                overrides.push(format!("experiment.trials={t}"));
            }
            if let Some(dir) = out {
                overrides.push(format!("experiment.output_dir={}", dir.display()));
            }
            let cfg = load_config(&config, &overrides).map_err(classify)?;
            let report =
                run_experiment(&cfg).map_err(|e| Failure::Runtime(format!("{e:#}")))?;
            report
                .write_to(&cfg.output_dir)
                .map_err(|e| Failure::Runtime(format!("{e:#}")))?;
            println!(
                "wrote {} ({} trials, {} failed)",
                cfg.output_dir.join("report.json").display(),
                report.aggregate.trials,
                report.aggregate.failed_trials
            );
            if report.aggregate.failed_trials > 0 {
                return Err(Failure::Runtime(format!(
                    "{} of {} trials failed; see report",
                    report.aggregate.failed_trials, report.aggregate.trials
                )));
            }
            Ok(())
        }
        Command::Validate { config, overrides } => {
            let cfg = load_config(&config, &overrides).map_err(classify)?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config echo"));
            Ok(())
        }
        Command::W1Check { dataset_a, dataset_b, extractor, seed } => {
            w1_check(&dataset_a, &dataset_b, &extractor, seed)
                .map_err(|e| Failure::Runtime(format!("{e:#}")))
        }
    }
}

fn w1_check(
    dataset_a: &PathBuf,
    dataset_b: &PathBuf,
    extractor: &str,
    seed: u64,
) -> anyhow::Result<()> {
    let a = load_dataset(dataset_a)?;
    let b = load_dataset(dataset_b)?;
    let g: FeatureExtractor<F> = match extractor.strip_prefix("identity:") {
        Some(w) => FeatureExtractor::identity(w.parse()?),
        None => load_extractor(std::path::Path::new(extractor))?,
    };
    let feats = |d: &mendata_core::data::Dataset| -> anyhow::Result<Vec<Vec<F>>> {
        (0..d.n())
            .map(|i| {
                let row: Vec<F> = d.input(i).iter().map(|&v| f64::from(v)).collect();
                g.extract(&row).map_err(Into::into)
            })
            .collect()
    };
    let fa = feats(&a)?;
    let fb = feats(&b)?;

    // Equal-size subsample (capped) for the assignment oracle.
    let cap = 1024usize;
    let n = fa.len().min(fb.len()).min(cap);
    let mut rng = SeedStream::new(seed, streams::NOISE);
    let sub = |f: &[Vec<F>], rng: &mut SeedStream| -> Vec<Vec<F>> {
        if f.len() <= n {
            f.to_vec()
        } else {
            let pool: Vec<usize> = (0..f.len()).collect();
            rng.sample_without_replacement(&pool, n).into_iter().map(|i| f[i].clone()).collect()
        }
    };
    let sa = sub(&fa, &mut rng);
    let sb = sub(&fb, &mut rng);
    let exact = exact_w1(&sa, &sb)?;

    // Dual estimate: converged critic gap with a tight Lipschitz penalty.
    let mut init_rng = SeedStream::new(seed, streams::CRITIC_INIT);
    let mut critic = Critic::<F>::init(128, g.feature_dim(), &mut init_rng);
    let cfg = InnerConfig { nu: 50.0, ..InnerConfig::default() };
    let mut batch_rng = SeedStream::new(seed, streams::BATCH);
    let history = train_inner(&mut critic, &fa, &fb, &cfg, &mut batch_rng)?;
    let gap = history.last().copied().unwrap_or(f64::NAN);

    println!("exact_w1 = {exact}");
    println!("critic_gap = {gap}");
    println!("relative_error = {}", ((gap - exact) / exact).abs());
    Ok(())
}
