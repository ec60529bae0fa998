mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::quick_cfg;
use customkd::distill::Method;
use customkd::harness::{
    mean_std, prepare, run_experiment, run_method, run_sweep, Axis, ExperimentConfig, CHECKPOINT_DIR,
    INCOMPLETE_MARKER, METRICS_FILE, PIPELINE_CHECKPOINT, STUDENT_CHECKPOINT, SUMMARY_FILE,
};
use customkd::runlog::StageTag;
use customkd::Error;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn config_errors_name_the_key() {
    let err = ExperimentConfig::parse("method = \"customkd\"\n[benchmark]\nkind = \"uda\"\nangle = 3\n").unwrap_err();
    assert!(matches!(err, Error::Config { ref path, .. } if path.starts_with("benchmark")), "{err}");
    let err = ExperimentConfig::parse("[benchmark]\nkind = \"uda\"\n").unwrap_err();
    assert!(err.to_string().contains("method"), "{err}");
    let err = ExperimentConfig::parse("method = \"soft_target\"\n[benchmark]\nkind = \"uda\"\n").unwrap_err();
    assert!(err.to_string().contains("kd.temperature"), "{err}");
}

#[test]
fn defaults_from_a_minimal_config() {
    let cfg = ExperimentConfig::parse("method = \"customkd\"\n[benchmark]\nkind = \"uda\"\n").unwrap();
    assert_eq!((cfg.loss.lambda_u, cfg.loss.lambda_ft, cfg.loss.lambda_ftilde), (0.1, 10.0, 10.0));
    assert_eq!(cfg.schedule.ratio, 1);
    assert_eq!(cfg.hash(), ExperimentConfig::default_uda().hash());
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let cfg = quick_cfg(21);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&cfg, a.path()).unwrap();
    let rb = run_experiment(&cfg, b.path()).unwrap();
    assert_eq!(ra.dir.file_name(), rb.dir.file_name());
    for f in [
        PathBuf::from(METRICS_FILE),
        Path::new(CHECKPOINT_DIR).join(STUDENT_CHECKPOINT),
        Path::new(CHECKPOINT_DIR).join(PIPELINE_CHECKPOINT),
    ] {
        assert_eq!(std::fs::read(ra.dir.join(&f)).unwrap(), std::fs::read(rb.dir.join(&f)).unwrap(), "{f:?}");
    }
    assert!(!ra.dir.join(INCOMPLETE_MARKER).exists());
    let summary = std::fs::read_to_string(ra.dir.join(SUMMARY_FILE)).unwrap();
    assert!(summary.starts_with("status = \"complete\""));
    let mut other = cfg.clone();
    other.seed = 22;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn failed_run_keeps_the_marker() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("only_labeled.csv");
    std::fs::write(&data, "feature_0,feature_1,label,domain\n0,1,0,source\n1,0,1,source\n").unwrap();
    let mut cfg = quick_cfg(0);
    cfg.benchmark = customkd::harness::BenchmarkConfig::Csv(customkd::harness::CsvBenchmark { path: data });
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().contains("unlabeled"), "{err}");
    let run_dir = dir.path().join(cfg.hash());
    assert!(run_dir.join(INCOMPLETE_MARKER).exists());
    let summary = std::fs::read_to_string(run_dir.join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("status = \"failed\""));
}

#[test]
fn method_none_has_no_customization_and_no_feature_terms() {
    let mut cfg = quick_cfg(23);
    cfg.method = Method::None;
    let prep = prepare(&cfg).unwrap();
    let (log, _) = run_method(&cfg, &prep).unwrap();
    let kd: Vec<_> = log.rows.iter().filter(|r| r.stage == StageTag::Distill).collect();
    assert_eq!(kd.len(), cfg.schedule.kd_epochs);
    assert!(log.rows.iter().all(|r| r.stage != StageTag::Customize));
    for r in kd {
        assert_eq!((r.l_ft, r.l_ftilde, r.l_pred), (Some(0.0), Some(0.0), Some(0.0)));
        assert!(r.l_u.unwrap() > 0.0);
    }
}

#[test]
fn customkd_log_alternates_and_records_every_term() {
    let cfg = quick_cfg(24);
    let prep = prepare(&cfg).unwrap();
    let (log, _) = run_method(&cfg, &prep).unwrap();
    let stages: Vec<StageTag> = log.stage_sequence().into_iter().filter(|s| *s != StageTag::Pretrain).collect();
    assert_eq!(stages.len(), 2 * cfg.schedule.kd_epochs);
    for pair in stages.chunks(2) {
        assert_eq!(pair, [StageTag::Customize, StageTag::Distill]);
    }
    let w = cfg.loss;
    for r in log.rows.iter().filter(|r| r.stage == StageTag::Distill) {
        let sum = r.l_l.unwrap()
            + w.lambda_u * r.l_u.unwrap()
            + w.lambda_ft * r.l_ft.unwrap()
            + w.lambda_ftilde * r.l_ftilde.unwrap();
        assert!((r.total.unwrap() - sum).abs() < 1e-10);
    }
    let last = log.rows.last().unwrap();
    assert!(last.l_ft.unwrap() > 0.0 && last.l_ftilde.unwrap() > 0.0);
    assert!(last.eval_acc.is_some() && last.cka_fs_ftilde.is_some());
    let csv = log.to_csv_string();
    assert!(csv.starts_with("epoch,stage,l_l,l_u,l_ft,l_ftilde,l_pred,total"));
}

fn read_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().clone();
    rd.records()
        .map(|r| header.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn sweep_aggregates_match_the_run_files() {
    let mut base = quick_cfg(0);
    base.schedule.kd_epochs = 2;
    let axes = [Axis::parse("method=none,customkd").unwrap()];
    let seeds = [1, 2, 3];
    let out = tempfile::tempdir().unwrap();
    let table = run_sweep(&base, &axes, &seeds, out.path()).unwrap();
    let path = table.save(out.path(), "t").unwrap();
    let rows = read_rows(&path);
    assert_eq!(rows.iter().filter(|r| r["row"] == "run").count(), 6);
    for method in ["none", "customkd"] {
        // Final accuracy of each run, re-read from its own metrics file.
        let accs: Vec<f64> = rows
            .iter()
            .filter(|r| r["row"] == "run" && r["method"] == method)
            .map(|r| {
                let metrics = read_rows(&out.path().join(&r["config_hash"]).join(METRICS_FILE));
                let last = metrics.iter().rev().find(|m| !m["eval_acc"].is_empty()).unwrap();
                let acc: f64 = last["eval_acc"].parse().unwrap();
                assert_eq!(acc, r["final_eval_acc"].parse::<f64>().unwrap());
                acc
            })
            .collect();
        assert_eq!(accs.len(), 3);
        let (mean, std) = mean_std(&accs);
        let get = |kind: &str| -> f64 {
            let r = rows.iter().find(|r| r["row"] == kind && r["method"] == method).unwrap();
            r["final_eval_acc"].parse().unwrap()
        };
        assert!((get("mean") - mean).abs() < 1e-15);
        assert!((get("std") - std.unwrap()).abs() < 1e-15);
    }
}

#[test]
fn sweep_records_failures_and_continues() {
    let mut base = quick_cfg(0);
    base.schedule.kd_epochs = 1;
    let axes = [Axis::parse("method=soft_target,none").unwrap()];
    let out = tempfile::tempdir().unwrap();
    let table = run_sweep(&base, &axes, &[5], out.path()).unwrap();
    assert!(table.runs[0].outcome.is_err());
    assert!(table.runs[1].outcome.is_ok());
    assert_eq!(table.aggregates.len(), 1);
}

#[test]
fn cli_run_is_reproducible_and_probe_reads_its_checkpoint() {
    let exe = env!("CARGO_BIN_EXE_customkd");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.toml");
    let mut cfg = quick_cfg(31);
    cfg.schedule.kd_epochs = 2;
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let run = |out: &Path| {
        let o = Command::new(exe)
            .args(["run", "--config"])
            .arg(&cfg_path)
            .env("CUSTOMKD_OUT", out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        PathBuf::from(String::from_utf8(o.stdout).unwrap().lines().next().unwrap())
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (da, db) = (run(&a), run(&b));
    assert!(da.starts_with(&a));
    assert_eq!(std::fs::read(da.join(METRICS_FILE)).unwrap(), std::fs::read(db.join(METRICS_FILE)).unwrap());

    let data = dir.path().join("data.csv");
    let o = Command::new(exe)
        .args(["export-data", "--config"])
        .arg(&cfg_path)
        .arg("--to")
        .arg(&data)
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = Command::new(exe)
        .args(["probe-cka", "--checkpoint"])
        .arg(da.join(CHECKPOINT_DIR).join(PIPELINE_CHECKPOINT))
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(o.status.success() && text.contains("cka_fs_ftilde = 0."), "{text}");

    let o = Command::new(exe).args(["run", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn distillation_does_not_lose_to_the_pretrained_student() {
    let mut gains = Vec::new();
    for seed in 0..3 {
        let mut cfg = ExperimentConfig::default_uda();
        cfg.seed = seed;
        let prep = prepare(&cfg).unwrap();
        let (log, _) = run_method(&cfg, &prep).unwrap();
        gains.push(log.last_eval_acc().unwrap() - prep.student_pretrain_acc);
    }
    assert!(gains.iter().sum::<f64>() >= 0.0, "{gains:?}");
}
