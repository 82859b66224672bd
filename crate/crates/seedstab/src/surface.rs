//! CSV for saddle-surface trajectories: `step,epoch,tag,x,y,f`, with values
//! in 17-significant-digit scientific notation.

use std::path::Path;

use seedstab_core::surface::{StepTag, TrajectoryStep};
use seedstab_core::{SurfacePoint, Trajectory};

use crate::error::{io_err, HarnessError, Result};

pub fn trajectory_csv(t: &Trajectory) -> String {
    let mut out = String::from("step,epoch,tag,x,y,f\n");
    for (i, s) in t.steps.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{:.16e},{:.16e},{:.16e}\n",
            s.epoch,
            s.tag.as_str(),
            s.point.x,
            s.point.y,
            s.point.f
        ));
    }
    out
}

pub fn write_trajectory_csv(t: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_csv(t)).map_err(io_err(path))
}

/// Parses the rows back; `f` is taken from the file, not recomputed.
pub fn parse_trajectory_csv(text: &str, path: &Path) -> Result<Vec<TrajectoryStep>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut steps = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let line = n + 2;
        let bad = |message: String| HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", row.len())));
        }
        let num = |i: usize| {
            row[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("bad number `{}`", &row[i])))
        };
        let epoch = row[1]
            .parse()
            .map_err(|_| bad(format!("bad epoch `{}`", &row[1])))?;
        let tag = StepTag::parse(&row[2]).ok_or_else(|| bad(format!("bad tag `{}`", &row[2])))?;
        steps.push(TrajectoryStep {
            point: SurfacePoint {
                x: num(3)?,
                y: num(4)?,
                f: num(5)?,
            },
            epoch,
            tag,
        });
    }
    Ok(steps)
}
