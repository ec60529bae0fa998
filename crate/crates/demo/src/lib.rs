//! Browser bindings. Every export returns a JSON string so the page needs
//! no generated glue beyond `wasm-bindgen`'s own.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use customkd::data::{gen_uda_benchmark, LabeledSet, UdaSpec};
use customkd::distill::{make_stage_plan, Method, TeacherHeadMode};
use customkd::harness::{prepare, run_method, ExperimentConfig};
use customkd::Result;

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data always serializes")
}

#[derive(Serialize)]
struct Scatter {
    classes: usize,
    /// `[x0, x1, label]` for the first two coordinates.
    source: Vec<[f64; 3]>,
    target: Vec<[f64; 3]>,
}

fn points(set: &LabeledSet) -> Vec<[f64; 3]> {
    (0..set.len())
        .map(|i| {
            let r = set.row(i);
            [r[0], r[1], set.y[i] as f64]
        })
        .collect()
}

pub fn scatter_json(seed: u64, angle_deg: f64) -> Result<String> {
    let spec = UdaSpec {
        angle_deg,
        seed,
        ..Default::default()
    };
    let b = gen_uda_benchmark(&spec)?;
    let s = Scatter {
        classes: spec.classes,
        source: points(&b.labeled),
        target: points(&b.eval),
    };
    Ok(to_json(&s))
}

#[derive(Serialize)]
struct Point {
    epoch: usize,
    stage: String,
    eval_acc: Option<f64>,
    cka_fs_ftilde: Option<f64>,
}

#[derive(Serialize)]
struct Curves {
    teacher_acc: f64,
    pretrain_acc: f64,
    final_acc: Option<f64>,
    rows: Vec<Point>,
}

/// Trains on the default domain-shift benchmark with a shortened schedule.
pub fn curves_json(seed: u64, method: &str, teacher_head: &str, kd_epochs: usize, ratio: usize) -> Result<String> {
    let mut cfg = ExperimentConfig::default_uda();
    cfg.seed = seed;
    cfg.method = Method::parse(method)?;
    if cfg.method.needs_probe() {
        cfg.loss.lambda_pred = 1.0;
        cfg.kd.temperature = Some(4.0);
    }
    cfg.kd.teacher_head = match teacher_head {
        "random" => TeacherHeadMode::Random,
        _ => TeacherHeadMode::Shared,
    };
    cfg.schedule.kd_epochs = kd_epochs;
    cfg.schedule.ratio = ratio;
    cfg.validate()?;
    let prep = prepare(&cfg)?;
    let (log, _) = run_method(&cfg, &prep)?;
    let c = Curves {
        teacher_acc: prep.teacher_eval_acc,
        pretrain_acc: prep.student_pretrain_acc,
        final_acc: log.last_eval_acc(),
        rows: log
            .rows
            .iter()
            .map(|r| Point {
                epoch: r.epoch,
                stage: r.stage.to_string(),
                eval_acc: r.eval_acc,
                cka_fs_ftilde: r.cka_fs_ftilde,
            })
            .collect(),
    };
    Ok(to_json(&c))
}

pub fn plan_json(kd_epochs: usize, ratio: usize) -> Result<String> {
    Ok(to_json(&make_stage_plan(kd_epochs, ratio)?.tokens()))
}

fn js(r: Result<String>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

/// Source and target samples of the domain-shift benchmark.
#[wasm_bindgen]
pub fn benchmark(seed: u32, angle_deg: f64) -> std::result::Result<String, JsValue> {
    js(scatter_json(seed.into(), angle_deg))
}

#[wasm_bindgen]
pub fn train(seed: u32, method: &str, teacher_head: &str, kd_epochs: u32, ratio: u32) -> std::result::Result<String, JsValue> {
    js(curves_json(seed.into(), method, teacher_head, kd_epochs as usize, ratio as usize))
}

#[wasm_bindgen]
pub fn stage_plan(kd_epochs: u32, ratio: u32) -> std::result::Result<String, JsValue> {
    js(plan_json(kd_epochs as usize, ratio as usize))
}
