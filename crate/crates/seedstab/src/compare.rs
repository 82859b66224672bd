//! Side-by-side comparison of runs that differ only in averaging mode.

use std::path::Path;

use serde::Serialize;

use seedstab_core::{AveragingMode, Method};

use crate::error::{io_err, HarnessError, Result};
use crate::experiment::RunReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub mode: AveragingMode,
    pub mean: f64,
    pub std: f64,
    /// `100 * (std_plain - std_mode) / std_plain`; absent when the plain
    /// std is zero.
    pub std_reduction_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyDelta {
    pub mode: AveragingMode,
    pub method: Method,
    pub bucket: usize,
    pub plain_entropy: f64,
    pub mode_entropy: f64,
    /// `mode_entropy - plain_entropy`; absent when either bucket is empty.
    pub delta: Option<f64>,
    pub plain_count: usize,
    pub mode_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub comparison_hash: String,
    pub dataset_fingerprint: String,
    pub accuracy: Vec<AccuracyRow>,
    pub entropy_deltas: Vec<EntropyDelta>,
}

pub fn std_reduction_percent(plain: f64, mode: f64) -> Option<f64> {
    (plain > 0.0).then(|| 100.0 * (plain - mode) / plain)
}

/// Compares `plain` against every report in `others`, which must share its
/// comparison hash and dataset.
pub fn compare_reports(plain: &RunReport, others: &[&RunReport]) -> Result<Comparison> {
    let base = &plain.report;
    for other in others {
        let meta = &other.report.metadata;
        if meta.comparison_hash != base.metadata.comparison_hash {
            return Err(HarnessError::Mismatch(format!(
                "{} run differs from the plain run beyond averaging mode and seeds",
                other.averaging.as_str()
            )));
        }
        if meta.dataset_fingerprint != base.metadata.dataset_fingerprint {
            return Err(HarnessError::Mismatch(format!(
                "{} run used a different dataset",
                other.averaging.as_str()
            )));
        }
    }

    let mut accuracy = vec![AccuracyRow {
        mode: plain.averaging,
        mean: base.accuracy_mean,
        std: base.accuracy_std,
        std_reduction_percent: std_reduction_percent(base.accuracy_std, base.accuracy_std),
    }];
    let mut entropy_deltas = Vec::new();
    for other in others {
        let r = &other.report;
        accuracy.push(AccuracyRow {
            mode: other.averaging,
            mean: r.accuracy_mean,
            std: r.accuracy_std,
            std_reduction_percent: std_reduction_percent(base.accuracy_std, r.accuracy_std),
        });
        for mb in &base.tables.methods {
            let Some(ob) = r.tables.methods.iter().find(|m| m.method == mb.method) else {
                continue;
            };
            for (p, o) in mb.buckets.iter().zip(&ob.buckets) {
                entropy_deltas.push(EntropyDelta {
                    mode: other.averaging,
                    method: mb.method,
                    bucket: p.bucket_index,
                    plain_entropy: p.mean_pairwise_entropy,
                    mode_entropy: o.mean_pairwise_entropy,
                    delta: (p.count > 0 && o.count > 0)
                        .then_some(o.mean_pairwise_entropy - p.mean_pairwise_entropy),
                    plain_count: p.count,
                    mode_count: o.count,
                });
            }
        }
    }
    Ok(Comparison {
        comparison_hash: base.metadata.comparison_hash.clone(),
        dataset_fingerprint: base.metadata.dataset_fingerprint.clone(),
        accuracy,
        entropy_deltas,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn accuracy_csv(c: &Comparison) -> String {
    let mut out = String::from("mode,mean,std,std_reduction_percent\n");
    for r in &c.accuracy {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.mode.as_str(),
            r.mean,
            r.std,
            opt(r.std_reduction_percent)
        ));
    }
    out
}

pub fn entropy_deltas_csv(c: &Comparison) -> String {
    let mut out = String::from(
        "mode,method,bucket,plain_entropy,mode_entropy,delta,plain_count,mode_count\n",
    );
    for d in &c.entropy_deltas {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            d.mode.as_str(),
            d.method.as_str(),
            d.bucket,
            d.plain_entropy,
            d.mode_entropy,
            opt(d.delta),
            d.plain_count,
            d.mode_count
        ));
    }
    out
}

/// Writes `comparison.json`, `accuracy.csv` and `entropy_deltas.csv`.
pub fn write_comparison(c: &Comparison, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut json = serde_json::to_string_pretty(c).expect("comparisons always serialize");
    json.push('\n');
    for (name, body) in [
        ("comparison.json", json),
        ("accuracy.csv", accuracy_csv(c)),
        ("entropy_deltas.csv", entropy_deltas_csv(c)),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}
