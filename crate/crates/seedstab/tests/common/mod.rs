#![allow(dead_code)]

use std::path::{Path, PathBuf};

use seedstab::RunConfig;
use seedstab_core::AveragingMode;

/// A configuration small enough to train in well under a second per seed.
pub fn tiny_config(averaging: AveragingMode, seeds: &[u64]) -> RunConfig {
    RunConfig {
        embed_dim: 4,
        conv_filters: 2,
        averaging,
        epochs: 3,
        seeds: seeds.to_vec(),
        synth_samples: 50,
        synth_vocab_size: 10,
        lime_perturbations: 60,
        ..RunConfig::default()
    }
}

/// Writes `cfg` as `<dir>/<name>.toml` and returns the path.
pub fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

/// Every file under `root`, relative path and contents, sorted by path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
