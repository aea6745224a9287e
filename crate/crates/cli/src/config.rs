//! Experiment configuration: TOML with sections, validated exhaustively
//! (every violation reported, unknown keys rejected), with dotted-path
//! command-line overrides for sweeps.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mendata_core::purify::PurifyConfig;
use mendata_core::F;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("TOML parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("bad override '{0}': expected key=value with a dotted section path")]
    BadOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PoisonTargeted,
    PoisonBackdoor,
    Tracing,
    DistributionMatch,
}

impl Scenario {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "poison_targeted" => Some(Self::PoisonTargeted),
            "poison_backdoor" => Some(Self::PoisonBackdoor),
            "tracing" => Some(Self::Tracing),
            "distribution_match" => Some(Self::DistributionMatch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    RandomNoise,
    Mendata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Simulated,
    KnnKappa,
}

/// Fully-resolved experiment configuration; serialized back into every
/// report so a run can be replayed exactly.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub trials: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,

    // data
    pub dataset_path: Option<PathBuf>,
    pub n_per_class: usize,
    pub classes: u32,
    pub test_per_class: usize,

    // extractor
    pub extractor_path: Option<PathBuf>,

    // manipulation
    pub epsilon: f64,
    pub poison_fraction: f64,
    pub mark_fraction: f64,
    pub manip_steps: usize,
    pub manip_step_size: f64,
    pub mark_gamma: f64,
    pub trigger_size: usize,
    pub trigger_value: f64,

    // detector
    pub detector: DetectorKind,
    pub precision_q: f64,
    pub recall_r: f64,
    pub knn_k: usize,
    pub knn_kappa: usize,

    // purifier
    pub purify: PurifySettings,

    // baseline
    pub baseline: BaselineKind,
    pub noise_sigma: f64,

    // probe
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,

    // reporting
    pub w1_sample_cap: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PurifySettings {
    pub eta_h: f64,
    pub eta_delta: f64,
    pub rho: f64,
    pub beta: f64,
    pub nu: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub checkpoint_interval: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub hidden: usize,
    pub max_inner_steps: usize,
}

impl PurifySettings {
    pub fn to_core(&self) -> PurifyConfig<F> {
        PurifyConfig {
            eta_h: self.eta_h,
            eta_delta: self.eta_delta,
            rho: self.rho,
            beta: self.beta,
            nu: self.nu,
            batch_size: self.batch_size,
            lambda: self.lambda,
            checkpoint_interval: self.checkpoint_interval,
            max_rounds: self.max_rounds,
            patience: self.patience,
            hidden: self.hidden,
            max_inner_steps: self.max_inner_steps,
        }
    }
}

impl Default for PurifySettings {
    fn default() -> Self {
        Self {
            eta_h: 1e-3,
            eta_delta: 0.05,
            rho: 0.05,
            beta: 2.0,
            nu: 10.0,
            batch_size: 64,
            lambda: 0.0,
            checkpoint_interval: 10,
            max_rounds: 30,
            patience: 5,
            hidden: 128,
            max_inner_steps: 5000,
        }
    }
}

struct Validator {
    errors: Vec<String>,
}

impl Validator {
    fn new() -> Self {
        Self { errors: Vec::new() }
    }

    fn fail(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn finish(self) -> Result<(), ConfigError> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(self.errors))
        }
    }
}

/// Key-by-key reader over a TOML section that remembers which keys were
/// consumed so unknown ones can be rejected.
struct Section<'a> {
    name: &'static str,
    table: Option<&'a toml::value::Table>,
    known: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(root: &'a toml::value::Table, name: &'static str, v: &mut Validator) -> Self {
        let table = match root.get(name) {
            None => None,
            Some(toml::Value::Table(t)) => Some(t),
            Some(_) => {
                v.fail(format!("[{name}] must be a table"));
                None
            }
        };
        Self { name, table, known: BTreeSet::new() }
    }

    fn get(&mut self, key: &str) -> Option<&'a toml::Value> {
        self.known.insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn float(&mut self, key: &str, default: f64, v: &mut Validator) -> f64 {
        match self.get(key) {
            None => default,
            Some(toml::Value::Float(f)) => *f,
            Some(toml::Value::Integer(i)) => *i as f64,
            Some(other) => {
                v.fail(format!("{}.{key}: expected a number, got {other}", self.name));
                default
            }
        }
    }

    fn integer(&mut self, key: &str, default: i64, v: &mut Validator) -> i64 {
        match self.get(key) {
            None => default,
            Some(toml::Value::Integer(i)) => *i,
            Some(other) => {
                v.fail(format!("{}.{key}: expected an integer, got {other}", self.name));
                default
            }
        }
    }

    fn string(&mut self, key: &str, v: &mut Validator) -> Option<String> {
        match self.get(key) {
            None => None,
            Some(toml::Value::String(s)) => Some(s.clone()),
            Some(other) => {
                v.fail(format!("{}.{key}: expected a string, got {other}", self.name));
                None
            }
        }
    }

    fn reject_unknown(&self, v: &mut Validator) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.known.contains(key) {
                    v.fail(format!("{}.{key}: unknown key", self.name));
                }
            }
        }
    }
}

/// Parses and validates a config file, applying `key=value` overrides
/// (dotted paths like `purify.rho=0.1`) before validation. All violations
/// are collected, not just the first.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut root: toml::Value =
        text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    apply_overrides(&mut root, overrides)?;
    let table = match &root {
        toml::Value::Table(t) => t,
        _ => return Err(ConfigError::Parse("top level must be a table".into())),
    };
    validate(table)
}

fn apply_overrides(root: &mut toml::Value, overrides: &[String]) -> Result<(), ConfigError> {
    for ov in overrides {
        let (key_path, raw) =
            ov.split_once('=').ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
        let parsed: toml::Value = if let Ok(i) = raw.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = raw.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = raw.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(raw.to_string())
        };
        let mut node = &mut *root;
        let parts: Vec<&str> = key_path.split('.').collect();
        if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::BadOverride(ov.clone()));
        }
        for part in &parts[..parts.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table =
            node.as_table_mut().ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
        table.insert(parts[parts.len() - 1].to_string(), parsed);
    }
    Ok(())
}

fn validate(root: &toml::value::Table) -> Result<ExperimentConfig, ConfigError> {
    let mut v = Validator::new();

    for key in root.keys() {
        if !matches!(
            key.as_str(),
            "experiment" | "data" | "extractor" | "manipulation" | "detector" | "purify"
                | "baseline" | "probe" | "report"
        ) {
            v.fail(format!("[{key}]: unknown section"));
        }
    }

    let mut experiment = Section::new(root, "experiment", &mut v);
    let scenario = match experiment.string("scenario", &mut v) {
        Some(s) => match Scenario::parse(&s) {
            Some(sc) => sc,
            None => {
                v.fail(format!(
                    "experiment.scenario: unknown scenario '{s}' (expected poison_targeted, poison_backdoor, tracing, or distribution_match)"
                ));
                Scenario::DistributionMatch
            }
        },
        None => {
            v.fail("experiment.scenario: required".into());
            Scenario::DistributionMatch
        }
    };
    let trials = experiment.integer("trials", 1, &mut v);
    if trials < 1 {
        v.fail(format!("experiment.trials: must be >= 1, got {trials}"));
    }
    let seed_base = experiment.integer("seed_base", 1000, &mut v);
    let output_dir = experiment
        .string("output_dir", &mut v)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("mendata-out"));
    experiment.reject_unknown(&mut v);

    let mut data = Section::new(root, "data", &mut v);
    let dataset_path = data.string("dataset_path", &mut v).map(PathBuf::from);
    let n_per_class = data.integer("n_per_class", 100, &mut v);
    if n_per_class < 1 {
        v.fail(format!("data.n_per_class: must be >= 1, got {n_per_class}"));
    }
    let classes = data.integer("classes", 10, &mut v);
    if !(1..=u32::MAX as i64).contains(&classes) {
        v.fail(format!("data.classes: must be >= 1, got {classes}"));
    }
    let test_per_class = data.integer("test_per_class", 20, &mut v);
    if test_per_class < 1 {
        v.fail(format!("data.test_per_class: must be >= 1, got {test_per_class}"));
    }
    data.reject_unknown(&mut v);

    let mut extractor = Section::new(root, "extractor", &mut v);
    let extractor_path = extractor.string("path", &mut v).map(PathBuf::from);
    extractor.reject_unknown(&mut v);

    let mut manipulation = Section::new(root, "manipulation", &mut v);
    let epsilon = manipulation.float("epsilon", 16.0 / 255.0, &mut v);
    if epsilon < 0.0 {
        v.fail(format!("manipulation.epsilon: must be >= 0, got {epsilon}"));
    }
    let poison_fraction = manipulation.float("poison_fraction", 0.1, &mut v);
    if !(0.0..=1.0).contains(&poison_fraction) {
        v.fail(format!("manipulation.poison_fraction: must be in [0,1], got {poison_fraction}"));
    }
    let mark_fraction = manipulation.float("mark_fraction", 0.1, &mut v);
    if !(0.0..=1.0).contains(&mark_fraction) {
        v.fail(format!("manipulation.mark_fraction: must be in [0,1], got {mark_fraction}"));
    }
    let manip_steps = manipulation.integer("steps", 50, &mut v);
    let manip_step_size = manipulation.float("step_size", 0.01, &mut v);
    let mark_gamma = manipulation.float("gamma", 0.1, &mut v);
    let trigger_size = manipulation.integer("trigger_size", 2, &mut v);
    if trigger_size < 0 {
        v.fail(format!("manipulation.trigger_size: must be >= 0, got {trigger_size}"));
    }
    let trigger_value = manipulation.float("trigger_value", 1.0, &mut v);
    if !(0.0..=1.0).contains(&trigger_value) {
        v.fail(format!("manipulation.trigger_value: must be in [0,1], got {trigger_value}"));
    }
    manipulation.reject_unknown(&mut v);

    let mut detector = Section::new(root, "detector", &mut v);
    let detector_kind = match detector.string("kind", &mut v).as_deref() {
        None | Some("simulated") => DetectorKind::Simulated,
        Some("knn_kappa") => DetectorKind::KnnKappa,
        Some(other) => {
            v.fail(format!("detector.kind: unknown kind '{other}' (expected simulated or knn_kappa)"));
            DetectorKind::Simulated
        }
    };
    let precision_q = detector.float("q", 1.0, &mut v);
    if !(precision_q > 0.0 && precision_q <= 1.0) {
        v.fail(format!("detector.q: must be in (0,1], got {precision_q}"));
    }
    let recall_r = detector.float("r", 0.1, &mut v);
    if !(0.0..=1.0).contains(&recall_r) {
        v.fail(format!("detector.r: must be in [0,1], got {recall_r}"));
    }
    let knn_k = detector.integer("k", 100, &mut v);
    let knn_kappa = detector.integer("kappa", 10, &mut v);
    detector.reject_unknown(&mut v);

    let defaults = PurifySettings::default();
    let mut purify = Section::new(root, "purify", &mut v);
    let settings = PurifySettings {
        eta_h: purify.float("eta_h", defaults.eta_h, &mut v),
        eta_delta: purify.float("eta_delta", defaults.eta_delta, &mut v),
        rho: purify.float("rho", defaults.rho, &mut v),
        beta: purify.float("beta", defaults.beta, &mut v),
        nu: purify.float("nu", defaults.nu, &mut v),
        batch_size: purify.integer("batch_size", defaults.batch_size as i64, &mut v).max(0) as usize,
        lambda: purify.float("lambda", defaults.lambda, &mut v),
        checkpoint_interval: purify
            .integer("checkpoint_interval", defaults.checkpoint_interval as i64, &mut v)
            .max(0) as usize,
        max_rounds: purify.integer("max_rounds", defaults.max_rounds as i64, &mut v).max(0) as usize,
        patience: purify.integer("patience", defaults.patience as i64, &mut v).max(0) as usize,
        hidden: purify.integer("hidden", defaults.hidden as i64, &mut v).max(0) as usize,
        max_inner_steps: purify
            .integer("max_inner_steps", defaults.max_inner_steps as i64, &mut v)
            .max(0) as usize,
    };
    if !(0.0..=1.0).contains(&settings.rho) {
        v.fail(format!("purify.rho: must be in [0,1], got {}", settings.rho));
    }
    if settings.beta < 0.0 {
        v.fail(format!("purify.beta: must be >= 0, got {}", settings.beta));
    }
    if settings.lambda < 0.0 {
        v.fail(format!("purify.lambda: must be >= 0, got {}", settings.lambda));
    }
    if settings.batch_size == 0 {
        v.fail("purify.batch_size: must be >= 1".into());
    }
    if settings.checkpoint_interval == 0 {
        v.fail("purify.checkpoint_interval: must be >= 1".into());
    }
    if settings.hidden == 0 {
        v.fail("purify.hidden: must be >= 1".into());
    }
    purify.reject_unknown(&mut v);

    let mut baseline = Section::new(root, "baseline", &mut v);
    let baseline_kind = match baseline.string("kind", &mut v).as_deref() {
        None | Some("mendata") => BaselineKind::Mendata,
        Some("none") => BaselineKind::None,
        Some("random_noise") => BaselineKind::RandomNoise,
        Some(other) => {
            v.fail(format!("baseline.kind: unknown kind '{other}' (expected mendata, none, or random_noise)"));
            BaselineKind::Mendata
        }
    };
    let noise_sigma = baseline.float("sigma", 16.0, &mut v);
    if noise_sigma < 0.0 {
        v.fail(format!("baseline.sigma: must be >= 0, got {noise_sigma}"));
    }
    baseline.reject_unknown(&mut v);

    let mut probe = Section::new(root, "probe", &mut v);
    let probe_epochs = probe.integer("epochs", 50, &mut v);
    let probe_lr = probe.float("lr", 0.1, &mut v);
    let probe_batch = probe.integer("batch_size", 64, &mut v);
    if probe_batch < 1 {
        v.fail(format!("probe.batch_size: must be >= 1, got {probe_batch}"));
    }
    probe.reject_unknown(&mut v);

    let mut report = Section::new(root, "report", &mut v);
    let w1_sample_cap = report.integer("w1_sample_cap", 256, &mut v);
    if w1_sample_cap < 1 {
        v.fail(format!("report.w1_sample_cap: must be >= 1, got {w1_sample_cap}"));
    }
    report.reject_unknown(&mut v);

    v.finish()?;

    Ok(ExperimentConfig {
        scenario,
        trials: trials as usize,
        seed_base: seed_base as u64,
        output_dir,
        dataset_path,
        n_per_class: n_per_class as usize,
        classes: classes as u32,
        test_per_class: test_per_class as usize,
        extractor_path,
        epsilon,
        poison_fraction,
        mark_fraction,
        manip_steps: manip_steps.max(0) as usize,
        manip_step_size,
        mark_gamma,
        trigger_size: trigger_size as usize,
        trigger_value,
        detector: detector_kind,
        precision_q,
        recall_r,
        knn_k: knn_k.max(1) as usize,
        knn_kappa: knn_kappa.max(1) as usize,
        purify: settings,
        baseline: baseline_kind,
        noise_sigma,
        probe_epochs: probe_epochs.max(0) as usize,
        probe_lr,
        probe_batch: probe_batch as usize,
        w1_sample_cap: w1_sample_cap as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mendata-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("cfg-{:x}.toml", rand_suffix(content)));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn rand_suffix(s: &str) -> u64 {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let mut h = DefaultHasher::new();
        s.hash(&mut h);
        h.finish()
    }

    #[test]
    fn minimal_tracing_config_gets_paper_defaults() {
        let path = write_tmp("[experiment]\nscenario = \"tracing\"\n");
        let cfg = load_config(&path, &[]).unwrap();
        assert_eq!(cfg.scenario, Scenario::Tracing);
        assert_eq!(cfg.purify.nu, 10.0);
        assert_eq!(cfg.purify.beta, 2.0);
        assert_eq!(cfg.purify.max_rounds, 30);
        assert_eq!(cfg.purify.patience, 5);
    }

    #[test]
    fn rho_out_of_range_names_field_and_bound() {
        let path = write_tmp(
            "[experiment]\nscenario = \"tracing\"\n[purify]\nrho = 1.5\n",
        );
        match load_config(&path, &[]) {
            Err(ConfigError::Invalid(errs)) => {
                assert!(errs.iter().any(|e| e.contains("purify.rho") && e.contains("[0,1]")), "{errs:?}");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn multiple_violations_are_all_reported() {
        let path = write_tmp(
            "[experiment]\nscenario = \"nope\"\n[purify]\nrho = 1.5\n[manipulation]\nepsilon = -1.0\n",
        );
        match load_config(&path, &[]) {
            Err(ConfigError::Invalid(errs)) => {
                assert!(errs.len() >= 3, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("scenario")));
                assert!(errs.iter().any(|e| e.contains("purify.rho")));
                assert!(errs.iter().any(|e| e.contains("manipulation.epsilon")));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let path = write_tmp(
            "[experiment]\nscenario = \"tracing\"\nbogus = 1\n[nonsense]\nx = 2\n",
        );
        match load_config(&path, &[]) {
            Err(ConfigError::Invalid(errs)) => {
                assert!(errs.iter().any(|e| e.contains("experiment.bogus")));
                assert!(errs.iter().any(|e| e.contains("[nonsense]")));
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn overrides_apply_before_validation() {
        let path = write_tmp("[experiment]\nscenario = \"tracing\"\n");
        let cfg = load_config(
            &path,
            &["purify.rho=0.1".to_string(), "experiment.trials=7".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.purify.rho, 0.1);
        assert_eq!(cfg.trials, 7);
        // a non-numeric override value fails validation, not parsing
        assert!(matches!(
            load_config(&path, &["purify.rho=abc".to_string()]),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            load_config(&path, &["no-equals-sign".to_string()]),
            Err(ConfigError::BadOverride(_))
        ));
    }
}
