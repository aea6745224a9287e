//! Experiment reports: per-trial records plus recomputable aggregates,
//! emitted as deterministic JSON and CSV (wall-clock timings go to a
//! separate non-deterministic sidecar).

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use mendata_core::manip::DetectionReport;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct DetectionSummary {
    pub cosines: Vec<f64>,
    pub pvalues: Vec<f64>,
    pub combined_p: f64,
    pub flagged: bool,
}

impl DetectionSummary {
    pub fn from_report(r: &DetectionReport) -> Self {
        Self {
            cosines: r.cosines.clone(),
            pvalues: r.pvalues.clone(),
            combined_p: r.combined_p,
            flagged: r.flagged,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub stage_error: Option<String>,
    pub accuracy_unpurified: Option<f64>,
    pub accuracy_purified: Option<f64>,
    pub asr_unpurified: Option<f64>,
    pub asr_purified: Option<f64>,
    pub detection_unpurified: Option<DetectionSummary>,
    pub detection_purified: Option<DetectionSummary>,
    pub w1_before: Option<f64>,
    pub w1_after: Option<f64>,
    pub mean_delta_l2: f64,
    pub max_delta_linf: f64,
    pub purify_rounds: usize,
}

impl TrialRecord {
    pub fn new(trial: usize, seed: u64) -> Self {
        Self {
            trial,
            seed,
            stage_error: None,
            accuracy_unpurified: None,
            accuracy_purified: None,
            asr_unpurified: None,
            asr_purified: None,
            detection_unpurified: None,
            detection_purified: None,
            w1_before: None,
            w1_after: None,
            mean_delta_l2: 0.0,
            max_delta_linf: 0.0,
            purify_rounds: 0,
        }
    }

    pub fn failed(trial: usize, seed: u64, error: String) -> Self {
        let mut r = Self::new(trial, seed);
        r.stage_error = Some(error);
        r
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Stat { mean, std: var.sqrt(), count: values.len() })
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub trials: usize,
    pub failed_trials: usize,
    pub accuracy_unpurified: Option<Stat>,
    pub accuracy_purified: Option<Stat>,
    pub asr_unpurified: Option<Stat>,
    pub asr_purified: Option<Stat>,
    /// Paper-style counts: trials with ASR > 1/2 (single-target trials
    /// are 0/1 valued).
    pub asr_hits_unpurified: Option<String>,
    pub asr_hits_purified: Option<String>,
    pub flagged_unpurified: Option<String>,
    pub flagged_purified: Option<String>,
    pub w1_before: Option<Stat>,
    pub w1_after: Option<Stat>,
    pub mean_delta_l2: Option<Stat>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
    #[serde(skip)]
    pub timings: Vec<(usize, f64)>,
}

impl ExperimentReport {
    pub fn assemble(
        cfg: &ExperimentConfig,
        trials: Vec<TrialRecord>,
        timings: Vec<(usize, f64)>,
    ) -> Self {
        let ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.stage_error.is_none()).collect();
        let collect = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|t| f(t)).collect()
        };
        let hits = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Option<String> {
            let vals = collect(f);
            if vals.is_empty() {
                None
            } else {
                Some(format!(
                    "{}/{}",
                    vals.iter().filter(|&&v| v > 0.5).count(),
                    vals.len()
                ))
            }
        };
        let flags = |f: &dyn Fn(&TrialRecord) -> Option<bool>| -> Option<String> {
            let vals: Vec<bool> = ok.iter().filter_map(|t| f(t)).collect();
            if vals.is_empty() {
                None
            } else {
                Some(format!("{}/{}", vals.iter().filter(|&&v| v).count(), vals.len()))
            }
        };

        let aggregate = Aggregate {
            trials: trials.len(),
            failed_trials: trials.iter().filter(|t| t.stage_error.is_some()).count(),
            accuracy_unpurified: stat(&collect(&|t| t.accuracy_unpurified)),
            accuracy_purified: stat(&collect(&|t| t.accuracy_purified)),
            asr_unpurified: stat(&collect(&|t| t.asr_unpurified)),
            asr_purified: stat(&collect(&|t| t.asr_purified)),
            asr_hits_unpurified: hits(&|t| t.asr_unpurified),
            asr_hits_purified: hits(&|t| t.asr_purified),
            flagged_unpurified: flags(&|t| t.detection_unpurified.as_ref().map(|d| d.flagged)),
            flagged_purified: flags(&|t| t.detection_purified.as_ref().map(|d| d.flagged)),
            w1_before: stat(&collect(&|t| t.w1_before)),
            w1_after: stat(&collect(&|t| t.w1_after)),
            mean_delta_l2: stat(&collect(&|t| Some(t.mean_delta_l2))),
        };
        Self { config: cfg.clone(), trials, aggregate, timings }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// Per-trial CSV table (paper-style rows).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "trial,seed,accuracy_unpurified,accuracy_purified,asr_unpurified,asr_purified,\
             detection_p_unpurified,detection_p_purified,w1_before,w1_after,mean_delta_l2,\
             max_delta_linf,purify_rounds,stage_error\n",
        );
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                t.trial,
                t.seed,
                fmt(t.accuracy_unpurified),
                fmt(t.accuracy_purified),
                fmt(t.asr_unpurified),
                fmt(t.asr_purified),
                fmt(t.detection_unpurified.as_ref().map(|d| d.combined_p)),
                fmt(t.detection_purified.as_ref().map(|d| d.combined_p)),
                fmt(t.w1_before),
                fmt(t.w1_after),
                t.mean_delta_l2,
                t.max_delta_linf,
                t.purify_rounds,
                t.stage_error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        out
    }

    fn timings_csv(&self) -> String {
        let mut out = String::from("trial,wall_seconds\n");
        for (t, secs) in &self.timings {
            out.push_str(&format!("{t},{secs}\n"));
        }
        out
    }

    /// Writes report.json, report.csv, and timings.csv into `dir`
    /// atomically (write to a temp file, then rename). The JSON and CSV
    /// are byte-deterministic for a given config and seeds; timings.csv
    /// is wall-clock diagnostics and is excluded from that contract.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("create output dir {}", dir.display()))?;
        atomic_write(&dir.join("report.json"), self.to_json().as_bytes())?;
        atomic_write(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        atomic_write(&dir.join("timings.csv"), self.timings_csv().as_bytes())?;
        Ok(())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("rename into {}", path.display()))?;
    Ok(())
}
