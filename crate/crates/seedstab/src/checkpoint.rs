//! Plain-text model checkpoints. Values are stored as the hex of their IEEE
//! bit patterns, so a save/load round trip is bit-exact.
//!
//! ```text
//! seedstab-checkpoint 1
//! seed 7
//! config {"vocab_size":12,...}
//! param embedding 12x16 3fb99999999999a0 bf847ae147ae1480 ...
//! param conv1.weight 1x16x8 ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use seedstab_core::model::parameter_layout;
use seedstab_core::{Model, ModelConfig};

use crate::error::{io_err, HarnessError, Result};

const MAGIC: &str = "seedstab-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub model: Model,
}

pub fn checkpoint_to_string(seed: u64, model: &Model) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "seed {seed}").unwrap();
    let cfg = serde_json::to_string(model.config()).expect("model configs always serialize");
    writeln!(out, "config {cfg}").unwrap();
    for spec in model.layout() {
        let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
        write!(out, "param {} {}", spec.name, shape.join("x")).unwrap();
        for v in &model.parameters()[spec.range()] {
            write!(out, " {:016x}", v.to_bits()).unwrap();
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(path: &Path, seed: u64, model: &Model) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(seed, model)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_checkpoint(&text, path)
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Checkpoint> {
    let bad = |line: usize, message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| bad(0, format!("truncated before {what}")))
    };

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(bad(n, format!("expected `{MAGIC}`, found `{magic}`")));
    }
    let (n, seed_line) = next("seed")?;
    let seed = seed_line
        .strip_prefix("seed ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(n, "expected `seed <u64>`".into()))?;
    let (n, cfg_line) = next("config")?;
    let config: ModelConfig = cfg_line
        .strip_prefix("config ")
        .ok_or_else(|| bad(n, "expected `config <json>`".into()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| bad(n, e.to_string())))?;
    config
        .validate()
        .map_err(|e| bad(n, format!("invalid model config: {e}")))?;

    let layout = parameter_layout(&config);
    let mut params = Vec::new();
    for spec in &layout {
        let (n, line) = next(&spec.name)?;
        let mut fields = line.split(' ');
        if fields.next() != Some("param") {
            return Err(bad(n, format!("expected parameter `{}`", spec.name)));
        }
        let name = fields.next().unwrap_or_default();
        if name != spec.name {
            return Err(bad(
                n,
                format!("expected parameter `{}`, found `{name}`", spec.name),
            ));
        }
        let shape: Vec<usize> = fields
            .next()
            .unwrap_or_default()
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n, "malformed shape".into()))?;
        if shape != spec.shape {
            return Err(bad(
                n,
                format!(
                    "`{name}` has shape {shape:?}, layout expects {:?}",
                    spec.shape
                ),
            ));
        }
        let before = params.len();
        for f in fields {
            let bits = u64::from_str_radix(f, 16)
                .map_err(|_| bad(n, format!("bad value `{f}` in `{name}`")))?;
            params.push(f64::from_bits(bits));
        }
        if params.len() - before != spec.len() {
            return Err(bad(
                n,
                format!(
                    "`{name}` has {} values, expected {}",
                    params.len() - before,
                    spec.len()
                ),
            ));
        }
    }
    let (n, end) = next("end marker")?;
    if end != "end" {
        return Err(bad(n, format!("expected `end`, found `{end}`")));
    }
    let model = Model::from_parameters(config, params).map_err(|e| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(Checkpoint { seed, model })
}
