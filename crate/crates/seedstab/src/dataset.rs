//! JSON-lines datasets.
//!
//! One record per line:
//! `{"tokens": ["a", "b"], "label": 1, "split": "train", "id": "optional"}`.
//! Records without an `id` are named after their 1-based line number.
//! Blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use seedstab_core::{generate_synthetic, Dataset, Sample, Split};

use crate::config::{sha256_hex, RunConfig};
use crate::error::{io_err, HarnessError, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    tokens: Vec<String>,
    label: usize,
    split: Split,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text, path)
}

/// Parses JSONL text; `path` only labels errors.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = n + 1;
        let rec: Record = serde_json::from_str(line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.tokens.is_empty() {
            return Err(HarnessError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "record has no tokens".into(),
            });
        }
        samples.push(Sample {
            id: rec.id.unwrap_or_else(|| format!("line{line_no}")),
            tokens: rec.tokens,
            label: rec.label,
            split: rec.split,
        });
    }
    if samples.is_empty() {
        return Err(HarnessError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(Dataset::new(samples, None)?)
}

/// Canonical JSONL rendering (ids always written).
pub fn dataset_to_jsonl(dataset: &Dataset) -> String {
    let mut out = String::new();
    for s in dataset.samples() {
        let rec = Record {
            id: Some(s.id.clone()),
            tokens: s.tokens.clone(),
            label: s.label,
            split: s.split,
        };
        let line = serde_json::to_string(&rec).expect("records always serialize");
        writeln!(out, "{line}").unwrap();
    }
    out
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_jsonl(dataset)).map_err(io_err(path))
}

/// SHA-256 over the canonical JSONL rendering plus the class count.
pub fn fingerprint(dataset: &Dataset) -> String {
    let text = format!(
        "classes {}\n{}",
        dataset.num_classes(),
        dataset_to_jsonl(dataset)
    );
    sha256_hex(text.as_bytes())
}

/// The dataset a run config points at: its file, or the synthetic task
/// drawn with `data_seed`.
pub fn load_for_config(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.dataset {
        Some(path) => load_dataset(path)?,
        None => generate_synthetic(&cfg.synthetic_spec(), cfg.data_seed)?,
    };
    if ds.split(Split::Test).next().is_none() {
        return Err(HarnessError::Config(
            "dataset has an empty test split".into(),
        ));
    }
    Ok(ds)
}
