use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use seedstab::compare::{compare_reports, write_comparison};
use seedstab::dataset::write_dataset;
use seedstab::experiment::{load_report, ReportRequest, SeedStatus};
use seedstab::surface::write_trajectory_csv;
use seedstab::{parse_seeds, run_multiseed, run_report, run_single, HarnessError, RunConfig};
use seedstab_core::{
    generate_synthetic, run_trajectory, AveragingMode, Method, OptimizerConfig, SyntheticSpec,
};

#[derive(Parser)]
#[command(
    name = "seedstab",
    version,
    about = "Seed-stability experiments for attention text classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one seed into <out>/seed-<n>.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed and write the stability report under <out>/report.
    Multiseed {
        #[arg(long)]
        config: PathBuf,
        /// "1,2,3" or "range:a..b" (end exclusive); defaults to the config's list.
        #[arg(long)]
        seeds: Option<String>,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the stability report of a run directory.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Comma-separated subset of attention,gradient,lime.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        top_fraction: Option<f64>,
        /// Defaults to <runs>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare runs trained with and without averaging.
    Compare {
        #[arg(long)]
        plain: PathBuf,
        #[arg(long)]
        aswa: Option<PathBuf>,
        #[arg(long)]
        naswa: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset as JSON lines.
    Synth {
        /// TOML file with synthetic-task keys; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace an optimizer on the saddle surface and write the path as CSV.
    Surface {
        #[arg(long, value_enum, default_value_t = SurfaceOptimizer::Sgd)]
        optimizer: SurfaceOptimizer,
        /// Momentum for sgd; 0 disables it.
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value = "off")]
        averager: String,
        #[arg(long, default_value = "-1.8,1.2", allow_hyphen_values = true)]
        start: String,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SurfaceOptimizer {
    Sgd,
    Adagrad,
    Adam,
}

fn averaging(s: &str) -> Result<AveragingMode, HarnessError> {
    AveragingMode::parse(s).ok_or_else(|| HarnessError::Config(format!("unknown averager `{s}`")))
}

fn methods(s: &str) -> Result<Vec<Method>, HarnessError> {
    s.split(',')
        .map(|m| {
            Method::parse(m.trim())
                .ok_or_else(|| HarnessError::Config(format!("unknown method `{m}`")))
        })
        .collect()
}

fn start_point(s: &str) -> Result<(f64, f64), HarnessError> {
    let bad = || HarnessError::Config(format!("start `{s}` is not of the form x,y"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        x.trim().parse().map_err(|_| bad())?,
        y.trim().parse().map_err(|_| bad())?,
    ))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let summary = run_single(&cfg, seed, &out)?;
            match summary.status {
                SeedStatus::Ok => println!(
                    "seed {seed}: test accuracy {:.4}",
                    summary.test_accuracy.unwrap_or_default()
                ),
                SeedStatus::Diverged => println!(
                    "seed {seed}: diverged ({})",
                    summary.failure.unwrap_or_default()
                ),
            }
        }
        Command::Multiseed { config, seeds, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| HarnessError::Config("no --out and no output_dir".into()))?;
            let report = run_multiseed(&cfg, &out)?.report;
            println!(
                "{} seeds, accuracy {:.4} ± {:.4}, {} failed",
                report.metadata.seeds.len(),
                report.accuracy_mean,
                report.accuracy_std,
                report.failed_seeds.len()
            );
        }
        Command::Report {
            runs,
            methods: m,
            top_fraction,
            out,
        } => {
            let request = ReportRequest {
                methods: m.as_deref().map(methods).transpose()?,
                top_fraction,
            };
            let out = out.unwrap_or_else(|| runs.join(seedstab::experiment::REPORT_DIR));
            run_report(&runs, &request, &out)?;
        }
        Command::Compare {
            plain,
            aswa,
            naswa,
            out,
        } => {
            let base = load_report(&plain)?;
            let mut others = Vec::new();
            for (dir, mode) in [(aswa, AveragingMode::Aswa), (naswa, AveragingMode::Naswa)] {
                if let Some(dir) = dir {
                    let r = load_report(&dir)?;
                    if r.averaging != mode {
                        return Err(HarnessError::Mismatch(format!(
                            "{} was trained with averaging `{}`",
                            dir.display(),
                            r.averaging.as_str()
                        )));
                    }
                    others.push(r);
                }
            }
            if others.is_empty() {
                return Err(HarnessError::Config("pass --aswa and/or --naswa".into()));
            }
            let refs: Vec<_> = others.iter().collect();
            let c = compare_reports(&base, &refs)?;
            write_comparison(&c, &out)?;
            for row in &c.accuracy {
                println!("{:<6} {:.4} ± {:.4}", row.mode.as_str(), row.mean, row.std);
            }
        }
        Command::Synth { spec, seed, out } => {
            let spec: SyntheticSpec = match spec {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
                            path: path.clone(),
                            source,
                        })?;
                    toml::from_str(&text).map_err(|e| HarnessError::Parse {
                        path,
                        line: 0,
                        message: e.to_string(),
                    })?
                }
                None => SyntheticSpec::default(),
            };
            let ds = generate_synthetic(&spec, seed)?;
            write_dataset(&ds, &out)?;
        }
        Command::Surface {
            optimizer,
            momentum,
            averager,
            start,
            lr,
            epochs,
            iters,
            out,
        } => {
            let opt = match optimizer {
                SurfaceOptimizer::Sgd if momentum > 0.0 => {
                    OptimizerConfig::sgd_momentum(lr, momentum)
                }
                SurfaceOptimizer::Sgd => OptimizerConfig::sgd(lr),
                SurfaceOptimizer::Adagrad => OptimizerConfig::adagrad(lr),
                SurfaceOptimizer::Adam => OptimizerConfig::adam(lr),
            };
            let t = run_trajectory(
                start_point(&start)?,
                opt,
                averaging(&averager)?,
                epochs,
                iters,
            )?;
            write_trajectory_csv(&t, &out)?;
            let end = t.last();
            println!(
                "end ({:.6}, {:.6}), distance to minimum {:.3e}, closest approach to saddle {:.6}",
                end.x,
                end.y,
                end.distance_to_minimum(),
                t.min_distance_to_saddle()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
