//! One experiment end to end: data, teacher and student pretraining, the
//! teacher probe, the selected method, and the files written for it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{BenchmarkConfig, ExperimentConfig};
use crate::data::{gen_ssl_benchmark, gen_uda_benchmark, load_csv, DataBundle};
use crate::distill::{
    make_stage_plan, pretrain, run_baseline, train_customkd, Baseline, Method, TrainConfig,
    TrainContext,
};
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::models::{linear_probe, Checkpoint, FitConfig, HeadClassifier, Model, ModelSpec, Module};
use crate::runlog::{LogRow, MetricsLog, StageTag};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Student parameters only; enough for inference.
pub const STUDENT_CHECKPOINT: &str = "student.ckpt";
/// Student, frozen teacher encoder, both projectors and teacher heads.
pub const PIPELINE_CHECKPOINT: &str = "pipeline.ckpt";
/// Present while a run is in progress or after it failed.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

pub fn build_bundle(cfg: &ExperimentConfig) -> Result<DataBundle> {
    match &cfg.benchmark {
        BenchmarkConfig::Uda(spec) => {
            let mut spec = spec.clone();
            spec.seed = cfg.seed;
            gen_uda_benchmark(&spec)
        }
        BenchmarkConfig::Ssl(spec) => {
            let mut spec = spec.clone();
            spec.seed = cfg.seed;
            gen_ssl_benchmark(&spec)
        }
        BenchmarkConfig::Csv(c) => load_csv(&c.path),
    }
}

/// Everything a method run starts from. The student here is never trained
/// further; each run works on its own deep copy.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub bundle: DataBundle,
    pub teacher: Model,
    pub student: Model,
    pub probe: HeadClassifier,
    pub teacher_eval_acc: f64,
    pub teacher_probe_acc: f64,
    pub student_pretrain_acc: f64,
    /// One row per student pretraining epoch.
    pub pretrain_log: MetricsLog,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let bundle = build_bundle(cfg).map_err(|e| e.in_stage("data"))?;
    bundle.validate_for_training().map_err(|e| e.in_stage("data"))?;
    let classes = bundle.meta.classes;
    let dim = bundle.meta.dim;

    let teacher_data = match &bundle.pool {
        Some(pool) => {
            let n = ((pool.len() as f64 * cfg.teacher.pool_fraction()).round() as usize).clamp(1, pool.len());
            pool.prefix(n)
        }
        None => bundle.labeled.clone(),
    };
    let tspec = ModelSpec {
        input_dim: dim,
        hidden: cfg.teacher.hidden(),
        classes,
        seed: cfg.seed,
    };
    let tfit = FitConfig {
        epochs: cfg.teacher.epochs,
        learning_rate: cfg.teacher.lr,
        seed: cfg.seed,
        ..Default::default()
    };
    let (teacher, _) = pretrain("teacher", &tspec, &teacher_data, &tfit).map_err(|e| e.in_stage("teacher pretraining"))?;

    let sspec = ModelSpec {
        input_dim: dim,
        hidden: cfg.student.hidden.clone(),
        classes,
        seed: cfg.seed,
    };
    let sfit = FitConfig {
        epochs: cfg.student.epochs,
        learning_rate: cfg.student.lr,
        seed: cfg.seed,
        ..Default::default()
    };
    let (student, history) =
        pretrain("student", &sspec, &bundle.labeled, &sfit).map_err(|e| e.in_stage("student pretraining"))?;

    let pfit = FitConfig {
        epochs: cfg.probe.epochs,
        learning_rate: cfg.probe.lr,
        seed: cfg.seed,
        ..Default::default()
    };
    let probe = linear_probe(&teacher.encoder, &bundle.labeled, classes, &pfit, "teacher.probe")
        .map_err(|e| e.in_stage("linear probe"))?;

    let eval = |m: &Model| accuracy(m, &bundle.eval).map_err(|e| e.in_stage("evaluation"));
    let teacher_eval_acc = eval(&teacher)?;
    let teacher_probe_acc = eval(&Model::from_parts(teacher.encoder.clone(), probe.clone())?)?;
    let student_pretrain_acc = eval(&student)?;

    let mut pretrain_log = MetricsLog::default();
    let last = history.len();
    for (i, loss) in history.into_iter().enumerate() {
        let mut row = LogRow::new(i + 1, StageTag::Pretrain);
        row.l_l = Some(loss);
        row.total = Some(loss);
        if i + 1 == last {
            row.train_acc = Some(accuracy(&student, &bundle.labeled)?);
            row.eval_acc = Some(student_pretrain_acc);
        }
        pretrain_log.push(row);
    }
    Ok(Prepared {
        bundle,
        teacher,
        student,
        probe,
        teacher_eval_acc,
        teacher_probe_acc,
        student_pretrain_acc,
        pretrain_log,
    })
}

pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        weights: cfg.loss,
        lr_student: cfg.schedule.lr_student,
        lr_proj_t: cfg.schedule.lr_proj_t,
        lr_proj_s: cfg.schedule.lr_proj_s,
        momentum: cfg.schedule.momentum,
        batch_size: cfg.schedule.batch_size,
        seed: cfg.seed,
        teacher_head: cfg.kd.teacher_head,
        reinit_projector: cfg.kd.reinit_projector,
        use_bn: cfg.kd.use_bn,
        eval_every: cfg.run.eval_every,
        cka: cfg.run.cka,
    }
}

pub fn baseline_for(cfg: &ExperimentConfig) -> Option<Baseline> {
    match cfg.method {
        Method::Customkd => None,
        Method::Fitnet => Some(Baseline::Fitnet),
        Method::None => Some(Baseline::None),
        Method::Logits => Some(Baseline::Logits),
        Method::SoftTarget => Some(Baseline::SoftTarget {
            temperature: cfg.kd.temperature.unwrap_or(f64::NAN),
        }),
    }
}

/// Runs the configured method from a prepared state. The returned log
/// starts with the student's pretraining rows.
pub fn run_method(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(MetricsLog, TrainContext)> {
    let mut ctx = TrainContext::new(
        prep.student.deep_clone(),
        prep.teacher.encoder.clone(),
        prep.bundle.clone(),
        train_config(cfg),
    )
    .and_then(|c| c.with_probe_head(prep.probe.clone()))
    .map_err(|e| e.in_stage("setup"))?;
    let run = match baseline_for(cfg) {
        None => {
            let plan = make_stage_plan(cfg.schedule.kd_epochs, cfg.schedule.ratio)?;
            train_customkd(&mut ctx, &plan)?
        }
        Some(b) => run_baseline(b, &mut ctx, cfg.schedule.kd_epochs)?,
    };
    let mut log = prep.pretrain_log.clone();
    log.extend(run);
    Ok((log, ctx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub final_eval_acc: f64,
    pub teacher_eval_acc: f64,
    pub teacher_probe_acc: f64,
    pub student_pretrain_acc: f64,
    pub cka_fs_ft: Option<f64>,
    pub cka_fs_ftilde: Option<f64>,
    pub wall_time_s: f64,
}

impl Summary {
    /// `key = value` lines, readable as TOML.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_else(|| "\"n/a\"".into());
        let _ = writeln!(s, "status = \"complete\"");
        let _ = writeln!(s, "method = \"{}\"", self.method);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_hash = \"{}\"", self.config_hash);
        let _ = writeln!(s, "final_eval_acc = {:.17e}", self.final_eval_acc);
        let _ = writeln!(s, "final_eval_error = {:.17e}", 1.0 - self.final_eval_acc);
        let _ = writeln!(s, "teacher_eval_acc = {:.17e}", self.teacher_eval_acc);
        let _ = writeln!(s, "teacher_probe_acc = {:.17e}", self.teacher_probe_acc);
        let _ = writeln!(s, "student_pretrain_acc = {:.17e}", self.student_pretrain_acc);
        let _ = writeln!(s, "cka_kernel = \"linear\"");
        let _ = writeln!(s, "cka_split = \"eval\"");
        let _ = writeln!(s, "cka_fs_ft = {}", opt(self.cka_fs_ft));
        let _ = writeln!(s, "cka_fs_ftilde = {}", opt(self.cka_fs_ftilde));
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time_s);
        s
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub log: MetricsLog,
    pub summary: Summary,
}

/// Parameters written to the student checkpoint.
pub fn student_checkpoint(ctx: &TrainContext) -> Checkpoint {
    Checkpoint::from_params(&ctx.student.state())
}

pub fn pipeline_checkpoint(ctx: &TrainContext) -> Checkpoint {
    let mut ck = student_checkpoint(ctx);
    ck.extend(&ctx.teacher_encoder.state());
    ck.extend(&ctx.proj_t.state());
    ck.extend(&ctx.proj_s.state());
    for head in ctx.teacher_head.iter().chain(ctx.probe_head.iter()) {
        ck.extend(&head.state());
    }
    ck
}

/// Runs `cfg` and writes `<out_root>/<config-hash>/{metrics.csv,
/// summary.txt, checkpoints/}`. A failed run leaves the `INCOMPLETE`
/// marker and a summary naming the error.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = out_root.join(&hash);
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "run in progress\n")?;
    let fs_toml = cfg.to_toml()?;
    fs::write(dir.join("config.toml"), fs_toml)?;
    let start = Instant::now();
    match execute(cfg, &dir, &hash, start) {
        Ok(out) => {
            fs::remove_file(&marker)?;
            Ok(out)
        }
        Err(e) => {
            let text = format!(
                "status = \"failed\"\nconfig_hash = \"{hash}\"\nerror = {:?}\n",
                e.to_string()
            );
            fs::write(dir.join(SUMMARY_FILE), text)?;
            fs::write(&marker, format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig, dir: &Path, hash: &str, start: Instant) -> Result<RunOutcome> {
    let prep = prepare(cfg)?;
    let (log, ctx) = run_method(cfg, &prep)?;
    let write = |e: Error| e.in_stage("writing outputs");
    let mut f = fs::File::create(dir.join(METRICS_FILE)).map_err(|e| write(e.into()))?;
    log.write_csv(&mut f).map_err(write)?;
    let ck = dir.join(CHECKPOINT_DIR);
    student_checkpoint(&ctx).save(ck.join(STUDENT_CHECKPOINT)).map_err(write)?;
    pipeline_checkpoint(&ctx).save(ck.join(PIPELINE_CHECKPOINT)).map_err(write)?;
    let final_eval_acc = log
        .last_eval_acc()
        .ok_or_else(|| Error::Contract("run produced no evaluation row".into()))?;
    let summary = Summary {
        method: cfg.method,
        seed: cfg.seed,
        config_hash: hash.to_string(),
        final_eval_acc,
        teacher_eval_acc: prep.teacher_eval_acc,
        teacher_probe_acc: prep.teacher_probe_acc,
        student_pretrain_acc: prep.student_pretrain_acc,
        cka_fs_ft: log.last_cka_fs_ft(),
        cka_fs_ftilde: log.last_cka_fs_ftilde(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::write(dir.join(SUMMARY_FILE), summary.render()).map_err(|e| write(e.into()))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        log,
        summary,
    })
}
