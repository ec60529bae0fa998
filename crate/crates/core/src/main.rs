use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use customkd::data::{load_csv, save_csv};
use customkd::harness::{
    build_bundle, probe_cka, run_experiment, run_sweep, sweep_hash, Axis, ExperimentConfig,
};
use customkd::models::Checkpoint;
use customkd::Result;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "CUSTOMKD_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Parser)]
#[command(name = "customkd", version, about = "Knowledge distillation with teacher-feature customization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write metrics, summary and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; falls back to `run.out`, then $CUSTOMKD_OUT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product of one or more axes over several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `name=v1,v2,...`; repeat for a grid.
        #[arg(long, required = true)]
        axis: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CKA between a saved student and the teacher features on a data file.
    ProbeCka {
        /// A pipeline checkpoint (`checkpoints/pipeline.ckpt` of a run).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the configured benchmark to a CSV file.
    ExportData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        to: PathBuf,
    },
}

fn out_root(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.run.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let root = out_root(out, &cfg);
            let o = run_experiment(&cfg, &root)?;
            println!("{}", o.dir.display());
            println!(
                "method={} seed={} eval_acc={:.4} pretrain_acc={:.4} cka_fs_ftilde={} wall={:.1}s",
                o.summary.method,
                o.summary.seed,
                o.summary.final_eval_acc,
                o.summary.student_pretrain_acc,
                fmt_opt(o.summary.cka_fs_ftilde),
                o.summary.wall_time_s
            );
        }
        Cmd::Sweep { config, axis, seeds, out } => {
            let cfg = load(&config, None)?;
            let axes = axis.iter().map(|a| Axis::parse(a)).collect::<Result<Vec<_>>>()?;
            let root = out_root(out, &cfg);
            let table = run_sweep(&cfg, &axes, &seeds, &root)?;
            let path = table.save(&root, &sweep_hash(&cfg, &axes, &seeds))?;
            for a in &table.aggregates {
                println!(
                    "{:<40} n={} acc={:.4} ± {}",
                    a.cell.join(" "),
                    a.n,
                    a.mean,
                    fmt_opt(a.std)
                );
            }
            let failed = table.runs.iter().filter(|r| r.outcome.is_err()).count();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see the status column");
            }
            println!("{}", path.display());
        }
        Cmd::ProbeCka { checkpoint, data } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let bundle = load_csv(&data)?;
            let r = probe_cka(&ck, &bundle)?;
            println!("rows = {}", r.rows);
            println!("student_acc = {}", fmt_opt(r.student_acc));
            println!("cka_fs_ft = {:.6}", r.cka_fs_ft);
            println!("cka_fs_ftilde = {}", r.cka_fs_ftilde.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into()));
        }
        Cmd::ExportData { config, seed, to } => {
            let cfg = load(&config, seed)?;
            save_csv(&build_bundle(&cfg)?, &to)?;
            println!("{}", to.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
