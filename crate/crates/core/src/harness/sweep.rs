//! Cross-product sweeps over config axes and seeds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, TeacherPreset};
use super::experiment::run_experiment;
use crate::distill::{Method, TeacherHeadMode};
use crate::error::{Error, Result};

/// One swept knob with its values as written on the command line.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<String>,
}

pub const AXIS_NAMES: [&str; 9] = [
    "teacher_scale",
    "method",
    "lambda_u",
    "lambda_ft",
    "lambda_ftilde",
    "lambda_pred",
    "ratio",
    "teacher_head",
    "kd_epochs",
];

fn number<T: std::str::FromStr>(axis: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("axis {axis}: `{v}` is not a valid value")))
}

impl Axis {
    /// Parses `name=v1,v2,...`; every value is checked up front.
    pub fn parse(spec: &str) -> Result<Axis> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("axis `{spec}` is not of the form name=v1,v2")))?;
        let name = name.trim().to_string();
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!("axis {name} has no values")));
        }
        if !AXIS_NAMES.contains(&name.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown axis `{name}`; expected one of {}",
                AXIS_NAMES.join(", ")
            )));
        }
        let axis = Axis { name, values };
        let mut probe = ExperimentConfig::default_uda();
        for v in &axis.values {
            axis.apply(&mut probe, v)?;
        }
        Ok(axis)
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        let n = self.name.as_str();
        match n {
            "teacher_scale" => {
                cfg.teacher.preset = TeacherPreset::parse(value)?;
                cfg.teacher.hidden = None;
                cfg.teacher.pool_fraction = None;
            }
            "method" => cfg.method = Method::parse(value)?,
            "lambda_u" => cfg.loss.lambda_u = number(n, value)?,
            "lambda_ft" => cfg.loss.lambda_ft = number(n, value)?,
            "lambda_ftilde" => cfg.loss.lambda_ftilde = number(n, value)?,
            "lambda_pred" => cfg.loss.lambda_pred = number(n, value)?,
            "ratio" => cfg.schedule.ratio = number(n, value)?,
            "kd_epochs" => cfg.schedule.kd_epochs = number(n, value)?,
            "teacher_head" => {
                cfg.kd.teacher_head = match value {
                    "shared" => TeacherHeadMode::Shared,
                    "random" => TeacherHeadMode::Random,
                    _ => return Err(Error::InvalidArgument(format!("axis teacher_head: `{value}`"))),
                }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown axis `{n}`"))),
        }
        Ok(())
    }
}

/// One run of the sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    /// Axis values in axis order.
    pub cell: Vec<String>,
    pub seed: u64,
    pub config_hash: Option<String>,
    /// `Err` holds the failure message.
    pub outcome: std::result::Result<RunValues, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunValues {
    pub final_eval_acc: f64,
    pub cka_fs_ftilde: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellAggregate {
    pub cell: Vec<String>,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` below two runs.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub axes: Vec<String>,
    pub runs: Vec<SweepRun>,
    pub aggregates: Vec<CellAggregate>,
}

/// Mean and sample standard deviation; `None` for the deviation below two
/// values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

fn cells(axes: &[Axis]) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    out
}

fn cell_label(axes: &[String], cell: &[String]) -> String {
    axes.iter()
        .zip(cell)
        .map(|(a, v)| format!("{a}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Runs every cell for every seed, in cell-major order. A failing run is
/// recorded and the sweep continues.
pub fn run_sweep(base: &ExperimentConfig, axes: &[Axis], seeds: &[u64], out_root: &Path) -> Result<SweepTable> {
    if axes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("a sweep needs at least one axis and one seed".into()));
    }
    let mut runs = Vec::new();
    let mut aggregates = Vec::new();
    for cell in cells(axes) {
        let mut accs = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            let applied = axes
                .iter()
                .zip(&cell)
                .try_for_each(|(a, v)| a.apply(&mut cfg, v))
                .and_then(|_| cfg.validate());
            let (hash, outcome) = match applied {
                Err(e) => (None, Err(e.to_string())),
                Ok(()) => {
                    let hash = cfg.hash();
                    let outcome = run_experiment(&cfg, out_root)
                        .map(|o| RunValues {
                            final_eval_acc: o.summary.final_eval_acc,
                            cka_fs_ftilde: o.summary.cka_fs_ftilde,
                        })
                        .map_err(|e| e.to_string());
                    (Some(hash), outcome)
                }
            };
            if let Ok(v) = &outcome {
                accs.push(v.final_eval_acc);
            }
            runs.push(SweepRun {
                cell: cell.clone(),
                seed,
                config_hash: hash,
                outcome,
            });
        }
        if !accs.is_empty() {
            let (mean, std) = mean_std(&accs);
            aggregates.push(CellAggregate {
                cell: cell.clone(),
                n: accs.len(),
                mean,
                std,
            });
        }
    }
    Ok(SweepTable {
        axes: axes.iter().map(|a| a.name.clone()).collect(),
        runs,
        aggregates,
    })
}

/// Key for a sweep's output file: base config, axes and seeds.
pub fn sweep_hash(base: &ExperimentConfig, axes: &[Axis], seeds: &[u64]) -> String {
    let mut h = Sha256::new();
    h.update(base.hash().as_bytes());
    for a in axes {
        h.update(format!("|{}={}", a.name, a.values.join(",")).as_bytes());
    }
    h.update(format!("|seeds={seeds:?}").as_bytes());
    hex::encode(&h.finalize()[..8])
}

fn f(v: f64) -> String {
    format!("{v:.17e}")
}

impl SweepTable {
    /// Tidy CSV: one `run` row per cell and seed, then `mean` and `std`
    /// rows per cell.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["row".to_string(), "cell".to_string()];
        header.extend(self.axes.iter().cloned());
        header.extend(
            ["seed", "config_hash", "status", "n", "final_eval_acc", "cka_fs_ftilde"]
                .map(String::from),
        );
        wr.write_record(&header)?;
        for r in &self.runs {
            let mut rec = vec!["run".to_string(), cell_label(&self.axes, &r.cell)];
            rec.extend(r.cell.iter().cloned());
            rec.push(r.seed.to_string());
            rec.push(r.config_hash.clone().unwrap_or_default());
            match &r.outcome {
                Ok(v) => {
                    rec.push("ok".into());
                    rec.push(String::new());
                    rec.push(f(v.final_eval_acc));
                    rec.push(v.cka_fs_ftilde.map(f).unwrap_or_default());
                }
                Err(msg) => {
                    rec.push(format!("failed: {msg}"));
                    rec.extend([String::new(), String::new(), String::new()]);
                }
            }
            wr.write_record(&rec)?;
        }
        for a in &self.aggregates {
            for (kind, value) in [("mean", Some(a.mean)), ("std", a.std)] {
                let mut rec = vec![kind.to_string(), cell_label(&self.axes, &a.cell)];
                rec.extend(a.cell.iter().cloned());
                rec.extend([String::new(), String::new(), "ok".into(), a.n.to_string()]);
                rec.push(value.map(f).unwrap_or_default());
                rec.push(String::new());
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `<out_root>/sweep-<hash>.csv` and returns its path.
    pub fn save(&self, out_root: &Path, hash: &str) -> Result<PathBuf> {
        fs::create_dir_all(out_root)?;
        let path = out_root.join(format!("sweep-{hash}.csv"));
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(path)
    }
}
