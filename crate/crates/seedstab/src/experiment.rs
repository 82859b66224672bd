//! Multi-seed training runs and their stability reports.
//!
//! A run directory looks like
//!
//! ```text
//! <runs>/config.toml
//! <runs>/seed-<n>/checkpoint.txt   (absent when the seed diverged)
//! <runs>/seed-<n>/metrics.csv
//! <runs>/seed-<n>/summary.json
//! <runs>/report/...                (written by `multiseed` and `report`)
//! ```
//!
//! Nothing written depends on wall-clock time or on the order seeds finish,
//! so rerunning a pinned config reproduces every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seedstab_core::interpret::top_fraction_indices;
use seedstab_core::rng::PRNG_IDENTITY;
use seedstab_core::stability::{
    aggregate_observations, collect_observations, FailedSeed, InstanceObservation, MethodBuckets,
    ReportMetadata, SeedAccuracy,
};
use seedstab_core::{
    train_with_averaging, AveragingMode, Dataset, Error as CoreError, Method, Model, SeededRng,
    Split, StabilityReport, ARTIFACT_VERSION,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{fingerprint, load_for_config};
use crate::error::{io_err, HarnessError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_DIR: &str = "report";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Ok,
    Diverged,
}

/// Contents of `seed-<n>/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: SeedStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub artifact_version: String,
    pub prng: String,
}

/// `report.json`: the stability report plus the averaging mode it was
/// trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub averaging: AveragingMode,
    #[serde(flatten)]
    pub report: StabilityReport,
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifacts always serialize");
    s.push('\n');
    s
}

/// Writes `config.toml` into `root`, or checks that an existing one
/// describes the same experiment (seed lists may differ).
pub fn prepare_run_dir(cfg: &RunConfig, root: &Path, overwrite_seeds: bool) -> Result<()> {
    create_dir(root)?;
    let path = root.join(CONFIG_FILE);
    if path.exists() {
        let existing = RunConfig::load(&path)?;
        if existing.comparison_hash() != cfg.comparison_hash()
            || existing.averaging != cfg.averaging
            || existing.dataset != cfg.dataset
        {
            return Err(HarnessError::Mismatch(format!(
                "{} holds a run with a different configuration",
                root.display()
            )));
        }
        if !overwrite_seeds {
            return Ok(());
        }
    }
    let stored = RunConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write(&path, stored.to_toml())
}

/// Trains one seed and writes its directory. Divergence is recorded in the
/// summary rather than returned as an error.
pub fn train_seed(
    cfg: &RunConfig,
    dataset: &Dataset,
    dataset_fingerprint: &str,
    seed: u64,
    root: &Path,
) -> Result<SeedSummary> {
    let dir = seed_dir(root, seed);
    create_dir(&dir)?;
    let ckpt = dir.join("checkpoint.txt");
    if ckpt.exists() {
        fs::remove_file(&ckpt).map_err(io_err(&ckpt))?;
    }

    let train = dataset.encoded(Split::Train);
    let validation = dataset.encoded(Split::Validation);
    let test = dataset.encoded(Split::Test);
    let mut rng = SeededRng::new(seed);
    let mut model = Model::build(
        cfg.model_config(dataset.vocab().len(), dataset.num_classes()),
        &mut rng,
    )?;
    let base = SeedSummary {
        seed,
        status: SeedStatus::Ok,
        failure: None,
        test_accuracy: None,
        selected_epoch: None,
        epochs_run: 0,
        stopped_early: false,
        config_hash: cfg.hash(),
        dataset_fingerprint: dataset_fingerprint.to_string(),
        artifact_version: ARTIFACT_VERSION.into(),
        prng: PRNG_IDENTITY.into(),
    };

    let summary = match train_with_averaging(
        &mut model,
        &train,
        &validation,
        &cfg.train_config(),
        &mut rng,
    ) {
        Ok(outcome) => {
            let mut csv = String::from(
                "epoch,mean_loss,validation_accuracy,averaged_l1_norm,averaging_updates\n",
            );
            for m in &outcome.epochs {
                let val = m
                    .validation_accuracy
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.epoch, m.mean_loss, val, m.averaged_l1_norm, m.averaging_updates
                ));
            }
            write(&dir.join("metrics.csv"), csv)?;
            save_checkpoint(&ckpt, seed, &model)?;
            SeedSummary {
                test_accuracy: Some(model.accuracy(&test)?),
                selected_epoch: Some(outcome.selected_epoch),
                epochs_run: outcome.epochs.len(),
                stopped_early: outcome.stopped_early,
                ..base
            }
        }
        Err(e @ (CoreError::Diverged { .. } | CoreError::NonFinite(_))) => {
            write(
                &dir.join("metrics.csv"),
                "epoch,mean_loss,validation_accuracy,averaged_l1_norm,averaging_updates\n",
            )?;
            SeedSummary {
                status: SeedStatus::Diverged,
                failure: Some(e.to_string()),
                ..base
            }
        }
        Err(e) => return Err(e.into()),
    };
    write(&dir.join("summary.json"), to_json(&summary))?;
    Ok(summary)
}

/// `train`: one seed into `<root>/seed-<n>`.
pub fn run_single(cfg: &RunConfig, seed: u64, root: &Path) -> Result<SeedSummary> {
    let dataset = load_for_config(cfg)?;
    let fp = fingerprint(&dataset);
    prepare_run_dir(cfg, root, false)?;
    train_seed(cfg, &dataset, &fp, seed, root)
}

/// `multiseed`: every seed of `cfg`, then the report under
/// `<root>/report`. Seeds run one after another; each owns its stream and
/// directory, so the order has no effect on the output.
pub fn run_multiseed(cfg: &RunConfig, root: &Path) -> Result<RunReport> {
    let dataset = load_for_config(cfg)?;
    let fp = fingerprint(&dataset);
    prepare_run_dir(cfg, root, true)?;
    for &seed in &cfg.seeds {
        train_seed(cfg, &dataset, &fp, seed, root)?;
    }
    write_report(cfg, &dataset, &fp, root, &root.join(REPORT_DIR))
}

/// Overrides for `report`; `None` keeps the run's own setting.
#[derive(Debug, Clone, Default)]
pub struct ReportRequest {
    pub methods: Option<Vec<Method>>,
    pub top_fraction: Option<f64>,
}

/// `report`: rebuilds the report of an existing run directory.
pub fn run_report(runs: &Path, request: &ReportRequest, out: &Path) -> Result<RunReport> {
    let mut cfg = RunConfig::load(&runs.join(CONFIG_FILE))?;
    if let Some(m) = &request.methods {
        cfg.methods = m.clone();
    }
    if let Some(f) = request.top_fraction {
        cfg.top_fraction = f;
    }
    cfg.validate()?;
    let dataset = load_for_config(&cfg)?;
    let fp = fingerprint(&dataset);
    write_report(&cfg, &dataset, &fp, runs, out)
}

/// Seeds with a directory under `root`, ascending.
pub fn discover_seeds(root: &Path) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name();
        if let Some(seed) = name
            .to_str()
            .and_then(|n| n.strip_prefix("seed-"))
            .and_then(|n| n.parse::<u64>().ok())
        {
            if entry.path().join("summary.json").exists() {
                seeds.push(seed);
            }
        }
    }
    seeds.sort_unstable();
    Ok(seeds)
}

struct LoadedRun {
    seeds: Vec<u64>,
    models: Vec<(u64, Model)>,
    failed: Vec<FailedSeed>,
}

fn load_models(cfg: &RunConfig, dataset: &Dataset, fp: &str, root: &Path) -> Result<LoadedRun> {
    let seeds = discover_seeds(root)?;
    let expected = cfg.model_config(dataset.vocab().len(), dataset.num_classes());
    let mut models = Vec::new();
    let mut failed = Vec::new();
    for &seed in &seeds {
        let dir = seed_dir(root, seed);
        let summary: SeedSummary = read_json(&dir.join("summary.json"))?;
        if summary.dataset_fingerprint != fp {
            return Err(HarnessError::Mismatch(format!(
                "seed {seed} was trained on a different dataset"
            )));
        }
        match summary.status {
            SeedStatus::Diverged => failed.push(FailedSeed {
                seed,
                reason: summary.failure.unwrap_or_default(),
            }),
            SeedStatus::Ok => {
                let ckpt = load_checkpoint(&dir.join("checkpoint.txt"))?;
                if ckpt.seed != seed || *ckpt.model.config() != expected {
                    return Err(HarnessError::Mismatch(format!(
                        "checkpoint of seed {seed} does not match the run configuration"
                    )));
                }
                models.push((seed, ckpt.model));
            }
        }
    }
    Ok(LoadedRun {
        seeds,
        models,
        failed,
    })
}

fn write_report(
    cfg: &RunConfig,
    dataset: &Dataset,
    fp: &str,
    runs: &Path,
    out: &Path,
) -> Result<RunReport> {
    let loaded = load_models(cfg, dataset, fp, runs)?;
    let test = dataset.encoded(Split::Test);
    let models: Vec<Model> = loaded.models.iter().map(|(_, m)| m.clone()).collect();
    let observations =
        collect_observations(&models, &test, &cfg.methods, &cfg.observation_config())?;
    let options = cfg.report_options();
    let tables = aggregate_observations(&observations, &cfg.methods, &options)?;
    let accuracies = loaded
        .models
        .iter()
        .map(|(seed, m)| {
            Ok(SeedAccuracy {
                seed: *seed,
                accuracy: m.accuracy(&test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = ReportMetadata::new(
        cfg.hash(),
        cfg.comparison_hash(),
        fp.to_string(),
        loaded.seeds.clone(),
        &options,
    );
    let report = RunReport {
        averaging: cfg.averaging,
        report: StabilityReport::new(metadata, accuracies, loaded.failed, tables)?,
    };

    create_dir(out)?;
    write(&out.join(REPORT_FILE), to_json(&report))?;
    write(
        &out.join("buckets.csv"),
        buckets_csv(&report.report.tables.methods, None),
    )?;
    let by_label = &report.report.tables.per_label;
    let by_label_path = out.join("buckets_by_label.csv");
    if by_label.is_empty() {
        if by_label_path.exists() {
            fs::remove_file(&by_label_path).map_err(io_err(&by_label_path))?;
        }
    } else {
        let mut csv = String::new();
        for (i, l) in by_label.iter().enumerate() {
            let part = buckets_csv(&l.methods, Some(l.label));
            csv.push_str(if i == 0 {
                &part
            } else {
                part.split_once('\n').unwrap().1
            });
        }
        write(&by_label_path, csv)?;
    }
    write(&out.join("accuracy.csv"), accuracy_csv(&report.report))?;
    write(
        &out.join("explanations.jsonl"),
        explanations_jsonl(&observations, &loaded.models, cfg.top_fraction)?,
    )?;
    Ok(report)
}

fn buckets_csv(methods: &[MethodBuckets], label: Option<usize>) -> String {
    let mut out = String::new();
    if label.is_some() {
        out.push_str("label,");
    }
    out.push_str("method,bucket,mean_entropy,mean_jaccard,prediction_std,count\n");
    for m in methods {
        for b in &m.buckets {
            if let Some(l) = label {
                out.push_str(&format!("{l},"));
            }
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.method.as_str(),
                b.bucket_index,
                b.mean_pairwise_entropy,
                b.mean_jaccard_percent,
                b.prediction_std,
                b.count
            ));
        }
    }
    out
}

fn accuracy_csv(report: &StabilityReport) -> String {
    let mut out = String::from("seed,status,accuracy\n");
    for &seed in &report.metadata.seeds {
        if let Some(a) = report.accuracies.iter().find(|a| a.seed == seed) {
            out.push_str(&format!("{seed},ok,{}\n", a.accuracy));
        } else {
            out.push_str(&format!("{seed},diverged,\n"));
        }
    }
    out
}

#[derive(Serialize)]
struct ExplanationLine<'a> {
    method: Method,
    seed: u64,
    sample_id: &'a str,
    probabilities: Option<&'a [f64]>,
    top_indices: Option<Vec<usize>>,
}

fn explanations_jsonl(
    observations: &[InstanceObservation],
    models: &[(u64, Model)],
    top_fraction: f64,
) -> Result<String> {
    let mut out = String::new();
    for obs in observations {
        for (method, per_model) in &obs.interpretations {
            for ((seed, _), dist) in models.iter().zip(per_model) {
                let line = ExplanationLine {
                    method: *method,
                    seed: *seed,
                    sample_id: &obs.sample_id,
                    probabilities: dist.as_ref().map(|d| d.probabilities()),
                    top_indices: dist
                        .as_ref()
                        .map(|d| top_fraction_indices(d, top_fraction))
                        .transpose()?,
                };
                out.push_str(&serde_json::to_string(&line).expect("lines always serialize"));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Reads `report.json` from a report directory or from a run directory's
/// `report/` subdirectory.
pub fn load_report(dir: &Path) -> Result<RunReport> {
    let direct = dir.join(REPORT_FILE);
    let path = if direct.exists() {
        direct
    } else {
        dir.join(REPORT_DIR).join(REPORT_FILE)
    };
    read_json(&path)
}
